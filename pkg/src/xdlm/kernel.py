"""Stationary mixed noise kernel, time schedules and the forward process.

The noise kernel mixes a uniform component with an absorbing mask state::

    K = (k / N) J + mu M,        mu = 1 - k

Every row of ``K`` equals the target distribution ``pi = k u + mu e_mask``,
so ``K`` is rank one and idempotent. The forward transition between times
``s <= t`` is ``Q_{t|s} = a I + (1 - a) K`` with ``a = alpha(t) / alpha(s)``.

Dense matrices built here are meant for the oracle and for tests only; the
scalar code paths never materialize them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from xdlm.errors import DomainError

__all__ = [
    "MixedKernel",
    "Schedule",
    "LinearSchedule",
    "LogLinearSchedule",
    "make_schedule",
    "build_kernel",
    "dense_K",
    "dense_Q",
    "corrupt",
    "as_token_seq",
]


@dataclass(frozen=True)
class MixedKernel:
    """Parameters of the stationary kernel ``K = (k/N) J + mu M``.

    ``mu`` is derived from ``k`` and never stored on its own.
    """

    vocab_size: int
    mask_id: int
    k: float

    def __post_init__(self):
        if self.vocab_size < 2:
            raise DomainError(f"vocab_size must be >= 2, got {self.vocab_size}")
        if not 0 <= self.mask_id < self.vocab_size:
            raise DomainError(
                f"mask_id must lie in [0, {self.vocab_size}), got {self.mask_id}"
            )
        if not (0.0 <= self.k <= 1.0) or math.isnan(self.k):
            raise DomainError(f"k must lie in [0, 1], got {self.k}")

    @property
    def N(self) -> int:
        return self.vocab_size

    @property
    def mu(self) -> float:
        return 1.0 - self.k

    def rates(self) -> np.ndarray:
        """Noise rate r(e) for every token, i.e. the target distribution pi."""
        r = np.full(self.vocab_size, self.k / self.vocab_size)
        r[self.mask_id] += self.mu
        return r

    def rate(self, e: int) -> float:
        return self.k / self.vocab_size + (self.mu if e == self.mask_id else 0.0)


def build_kernel(N: int, mask_id: int | None = None, k: float = 0.1) -> MixedKernel:
    """Validate and build a kernel. ``mask_id`` defaults to the last index."""
    if mask_id is None:
        mask_id = N - 1
    return MixedKernel(vocab_size=int(N), mask_id=int(mask_id), k=float(k))


class Schedule:
    """Signal retention ``alpha(t)`` on [0, 1] with ``alpha(0) = 1``."""

    kind: str = ""

    def alpha(self, t):
        raise NotImplementedError

    def alpha_prime(self, t):
        raise NotImplementedError

    def beta(self, t):
        return 1.0 - self.alpha(t)

    def alpha_ts(self, s: float, t: float) -> float:
        """Conditional retention alpha(t) / alpha(s); s == t gives exactly 1."""
        if t < s:
            raise DomainError(f"need s <= t, got s={s}, t={t}")
        if s == t:
            return 1.0
        a_s = self.alpha(s)
        if a_s <= 0.0:
            raise DomainError(f"alpha(s) must be positive for s < t, got s={s}")
        return float(self.alpha(t) / a_s)

    def to_dict(self) -> dict:
        return {"kind": self.kind}


@dataclass(frozen=True)
class LinearSchedule(Schedule):
    """alpha(t) = 1 - t."""

    kind: str = field(default="linear", init=False)

    def alpha(self, t):
        return 1.0 - np.asarray(t, dtype=float) if np.ndim(t) else 1.0 - float(t)

    def alpha_prime(self, t):
        return -np.ones_like(t, dtype=float) if np.ndim(t) else -1.0


@dataclass(frozen=True)
class LogLinearSchedule(Schedule):
    """Log-linear total noise ``sigma(t) = -log(1 - (1 - eps) t)``.

    The retention is ``alpha(t) = exp(-sigma(t)) = 1 - (1 - eps) t``, so
    ``alpha(1) = eps`` rather than 0. ``eps = 0`` recovers the linear schedule.
    """

    eps: float = 1e-3
    kind: str = field(default="log-linear", init=False)

    def __post_init__(self):
        if not 0.0 <= self.eps < 1.0:
            raise DomainError(f"eps must lie in [0, 1), got {self.eps}")

    def sigma(self, t):
        return -np.log1p(-(1.0 - self.eps) * np.asarray(t, dtype=float))

    def alpha(self, t):
        a = 1.0 - (1.0 - self.eps) * np.asarray(t, dtype=float)
        return a if np.ndim(t) else float(a)

    def alpha_prime(self, t):
        d = -(1.0 - self.eps)
        return np.full(np.shape(t), d) if np.ndim(t) else d

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eps": self.eps}


def make_schedule(kind: str = "linear", **options) -> Schedule:
    if kind == "linear":
        if options:
            raise DomainError(f"linear schedule takes no options, got {sorted(options)}")
        return LinearSchedule()
    if kind in ("log-linear", "loglinear"):
        return LogLinearSchedule(**options)
    raise DomainError(f"unknown schedule kind {kind!r}")


def dense_K(kernel: MixedKernel) -> np.ndarray:
    """N x N kernel matrix; every row is the target distribution."""
    return np.tile(kernel.rates(), (kernel.N, 1))


def dense_Q(kernel: MixedKernel, schedule: Schedule, s: float, t: float) -> np.ndarray:
    """Forward transition matrix ``Q_{t|s}``, rows indexed by the state at s."""
    if not (0.0 <= s <= 1.0 and 0.0 <= t <= 1.0):
        raise DomainError(f"times must lie in [0, 1], got s={s}, t={t}")
    a = schedule.alpha_ts(s, t)
    return a * np.eye(kernel.N) + (1.0 - a) * dense_K(kernel)


def as_token_seq(ids, N: int | None = None) -> np.ndarray:
    """Coerce ``ids`` to an int64 array, checking the range when N is given."""
    arr = np.asarray(ids, dtype=np.int64)
    if N is not None and arr.size and (arr.min() < 0 or arr.max() >= N):
        raise DomainError(f"token ids must lie in [0, {N})")
    return arr


def corrupt(kernel: MixedKernel, schedule: Schedule, x0, t, rng_seed) -> np.ndarray:
    """Sample ``z_t ~ q(z_t | x0)`` independently per position.

    Each position keeps its token with probability alpha(t) and is otherwise
    redrawn from ``pi``. ``t`` may be a scalar or an array broadcastable
    against ``x0`` (e.g. shape ``(B, 1)`` for per-sequence times).
    ``rng_seed`` is an int seed or a ``numpy.random.Generator``.
    """
    x0 = as_token_seq(x0, kernel.N)
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0):
        raise DomainError("t must lie in [0, 1]")
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    alpha = np.asarray(schedule.alpha(t_arr), dtype=float)
    keep = rng.random(x0.shape) < alpha
    uniform = rng.random(x0.shape) < kernel.k
    draws = rng.integers(0, kernel.N, size=x0.shape)
    noise = np.where(uniform, draws, kernel.mask_id)
    return np.where(keep, x0, noise).astype(np.int64)
