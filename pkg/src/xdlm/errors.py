"""Exception hierarchy shared across the toolkit."""


class XDLMError(Exception):
    """Base class for all toolkit errors."""


class DomainError(XDLMError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class DegenerateDenominatorError(XDLMError, ArithmeticError):
    """The forward probability f_t(x, z_t) normalizing a posterior is zero."""


class NumericError(XDLMError, ArithmeticError):
    """A logarithm argument fell to or below the configured floor."""


class ScheduleError(XDLMError, ValueError):
    """A generation schedule violates its count invariants."""


class ConfigError(XDLMError, ValueError):
    """A run configuration file is malformed or fails validation."""


class CheckpointError(XDLMError, IOError):
    """A checkpoint is unreadable or was written by an incompatible version."""
