"""O(N) scalar formulation of the posterior, KL divergence and training loss.

Everything is expressed through two primitives:

    r(e)      = k/N + mu [e == mask]                  (noise rate)
    f_t(x, e) = alpha_t p_{x,e} + beta_t r(e)          (forward map)

``x`` is either a token index (clean data) or a probability vector over the
vocabulary. Predictions ``x_pred`` are probability vectors; by convention the
denoiser puts zero mass on the mask token (see :func:`to_prediction`), but
every formula here stays exact for arbitrary vectors because the mask-state
log term is carried explicitly instead of being dropped.

No function in this module builds an N x N array.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xdlm.errors import DegenerateDenominatorError, DomainError, NumericError
from xdlm.kernel import LinearSchedule, MixedKernel, Schedule

__all__ = [
    "ScalarContext",
    "to_prediction",
    "noise_rate",
    "f_map",
    "f_vector",
    "posterior",
    "h_exact",
    "h_limit",
    "kl_prefactor",
    "kl_scalar",
    "loss_weight",
    "loss_term",
    "loss_terms_batch",
]

EPS_LOG = 1e-30


@dataclass(frozen=True)
class ScalarContext:
    kernel: MixedKernel
    schedule: Schedule = LinearSchedule()
    eps_log: float = EPS_LOG

    def __post_init__(self):
        if not self.eps_log > 0.0:
            raise DomainError(f"eps_log must be positive, got {self.eps_log}")

    @property
    def N(self) -> int:
        return self.kernel.N


def to_prediction(probs, mask_id: int) -> np.ndarray:
    """Zero the mask entry of ``probs`` (last axis) and renormalize."""
    p = np.array(probs, dtype=float)
    p[..., mask_id] = 0.0
    total = p.sum(axis=-1, keepdims=True)
    if np.any(total <= 0.0):
        raise DomainError("prediction has no mass outside the mask token")
    return p / total


def _check_index(ctx: ScalarContext, e) -> int:
    e = int(e)
    if not 0 <= e < ctx.N:
        raise IndexError(f"token index {e} outside [0, {ctx.N})")
    return e


def _mass(x, e: int) -> float:
    if isinstance(x, (int, np.integer)):
        return 1.0 if int(x) == e else 0.0
    return float(x[e])


def _as_vector(ctx: ScalarContext, x) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        v = np.zeros(ctx.N)
        v[_check_index(ctx, x)] = 1.0
        return v
    v = np.asarray(x, dtype=float)
    if v.shape != (ctx.N,):
        raise DomainError(f"distribution must have shape ({ctx.N},), got {v.shape}")
    return v


def _alpha_beta(ctx: ScalarContext, t: float) -> tuple[float, float]:
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time must lie in [0, 1], got {t}")
    a = float(ctx.schedule.alpha(t))
    return a, 1.0 - a


def _log_ratio(ctx: ScalarContext, num: float, den: float, what: str) -> float:
    if num <= ctx.eps_log or den <= ctx.eps_log:
        raise NumericError(f"log argument at or below floor in {what}: {num!r} / {den!r}")
    return float(np.log(num / den))


def _weighted_log_ratio_sum(ctx, w, num, den, what: str) -> float:
    """sum_e w_e log(num_e / den_e) over entries with nonzero weight."""
    live = w != 0.0
    if not np.any(live):
        return 0.0
    n, d = num[live], den[live]
    if np.any(n <= ctx.eps_log) or np.any(d <= ctx.eps_log):
        raise NumericError(f"log argument at or below floor in {what}")
    return float(np.dot(w[live], np.log(n / d)))


def noise_rate(ctx: ScalarContext, e: int) -> float:
    return ctx.kernel.rate(_check_index(ctx, e))


def f_map(ctx: ScalarContext, t: float, x, e: int) -> float:
    """Forward diffusion map ``f_t(x, e) = alpha_t p_{x,e} + beta_t r(e)``."""
    e = _check_index(ctx, e)
    a, b = _alpha_beta(ctx, t)
    return a * _mass(x, e) + b * ctx.kernel.rate(e)


def f_vector(ctx: ScalarContext, t: float, x) -> np.ndarray:
    """``f_t(x, e)`` for every token e at once."""
    a, b = _alpha_beta(ctx, t)
    return a * _as_vector(ctx, x) + b * ctx.kernel.rates()


def _check_times(s: float, t: float):
    if not 0.0 <= s <= t <= 1.0:
        raise DomainError(f"need 0 <= s <= t <= 1, got s={s}, t={t}")


def posterior(ctx: ScalarContext, s: float, t: float, zt: int, x) -> np.ndarray:
    """``q(z_s = e | z_t, x) = f_s(x, e) f_{t|s}(e, z_t) / f_t(x, z_t)`` for all e."""
    _check_times(s, t)
    zt = _check_index(ctx, zt)
    denom = f_map(ctx, t, x, zt)
    if denom <= 0.0:
        raise DegenerateDenominatorError(
            f"f_t(x, z_t) = 0 for z_t={zt}: the state is unreachable from x"
        )
    a_ts = ctx.schedule.alpha_ts(s, t)
    # f_{t|s}(e, z_t) = a_ts [e == z_t] + (1 - a_ts) r(z_t)
    q = f_vector(ctx, s, x) * ((1.0 - a_ts) * ctx.kernel.rate(zt))
    q[zt] += a_ts * f_map(ctx, s, x, zt)
    return q / denom


@dataclass(frozen=True)
class _Pieces:
    """Log terms of the KL split as ``c1 * L1 + P * rest``."""

    c1: float
    L1: float
    P: float
    rest: float


def _kl_pieces(ctx: ScalarContext, s, t, zt, x, x_pred) -> _Pieces:
    if not 0.0 <= s < t <= 1.0:
        raise DomainError(f"need 0 <= s < t <= 1, got s={s}, t={t}")
    zt = _check_index(ctx, zt)
    kern = ctx.kernel
    N, k, mu, m = kern.N, kern.k, kern.mu, kern.mask_id
    a_s, b_s = _alpha_beta(ctx, s)
    if a_s <= 0.0:
        raise DomainError(f"alpha(s) must be positive, got s={s}")
    a_ts = ctx.schedule.alpha_ts(s, t)
    b_ts = 1.0 - a_ts
    r_z = kern.rate(zt)

    ft_x = f_map(ctx, t, x, zt)
    if ft_x <= 0.0:
        raise DegenerateDenominatorError(f"f_t(x, z_t) = 0 for z_t={zt}")
    fs_x = f_map(ctx, s, x, zt)
    c1 = a_ts * fs_x / ft_x
    L1 = 0.0
    if c1 != 0.0:
        ft_p = f_map(ctx, t, x_pred, zt)
        fs_p = f_map(ctx, s, x_pred, zt)
        L1 = _log_ratio(ctx, fs_x * ft_p, ft_x * fs_p, "posterior self-transition term")

    P = b_ts * a_s * r_z / ft_x
    rest = 0.0
    if P != 0.0:
        ft_p = f_map(ctx, t, x_pred, zt)
        rest -= _log_ratio(ctx, ft_x, ft_p, "normalizer term") / a_s
        fs_xv = f_vector(ctx, s, x)
        fs_pv = f_vector(ctx, s, x_pred)
        # sum_e p_{x,e} log(f_s(x,e) / f_s(x_pred,e)); one term for a token x
        if isinstance(x, (int, np.integer)):
            rest += _log_ratio(ctx, fs_xv[int(x)], fs_pv[int(x)], "clean-token term")
        else:
            rest += _weighted_log_ratio_sum(ctx, _as_vector(ctx, x), fs_xv, fs_pv, "clean-token term")
        if k > 0.0 and b_s > 0.0:
            w = np.full(N, k * b_s / (N * a_s))
            rest += _weighted_log_ratio_sum(ctx, w, fs_xv, fs_pv, "vocabulary sum")
        if mu > 0.0 and b_s > 0.0:
            # zero when neither distribution puts mass on the mask token
            rest += mu * b_s / a_s * _log_ratio(ctx, fs_xv[m], fs_pv[m], "mask term")
    return _Pieces(c1=c1, L1=L1, P=P, rest=rest)


def kl_prefactor(ctx: ScalarContext, s: float, t: float, zt: int, x) -> float:
    """``beta_{t|s} alpha_s r(z_t) / f_t(x, z_t)``."""
    _check_times(s, t)
    zt = _check_index(ctx, zt)
    ft_x = f_map(ctx, t, x, zt)
    if ft_x <= 0.0:
        raise DegenerateDenominatorError(f"f_t(x, z_t) = 0 for z_t={zt}")
    a_s = float(ctx.schedule.alpha(s))
    return (1.0 - ctx.schedule.alpha_ts(s, t)) * a_s * ctx.kernel.rate(zt) / ft_x


def h_exact(ctx: ScalarContext, s: float, t: float, zt: int, x, x_pred) -> float:
    """Auxiliary log-difference function with ``KL = prefactor * h``.

    Undefined when the prefactor vanishes (r(z_t) = 0, i.e. k = 0 with an
    unmasked z_t); use :func:`kl_scalar` there.
    """
    p = _kl_pieces(ctx, s, t, zt, x, x_pred)
    if p.P == 0.0:
        raise DomainError("h is undefined where the KL prefactor vanishes (r(z_t) = 0)")
    return p.c1 / p.P * p.L1 + p.rest


def kl_scalar(ctx: ScalarContext, s: float, t: float, zt: int, x, x_pred) -> float:
    """KL(q(z_s | z_t, x) || q(z_s | z_t, x_pred)) in O(N)."""
    p = _kl_pieces(ctx, s, t, zt, x, x_pred)
    return p.c1 * p.L1 + p.P * p.rest


def h_limit(ctx: ScalarContext, t: float, zt: int, x, x_pred) -> float:
    """The s -> t limit of :func:`h_exact`; the 0/0 log term becomes a ratio."""
    if not 0.0 < t < 1.0:
        raise DomainError(f"t must lie in (0, 1), got {t}")
    zt = _check_index(ctx, zt)
    kern = ctx.kernel
    N, k, mu, m = kern.N, kern.k, kern.mu, kern.mask_id
    a, b = _alpha_beta(ctx, t)
    if a <= 0.0:
        raise DomainError(f"alpha(t) must be positive, got t={t}")
    ft_x = f_map(ctx, t, x, zt)
    ft_p = f_map(ctx, t, x_pred, zt)
    if ft_p <= ctx.eps_log:
        raise NumericError(f"f_t(x_pred, z_t) at or below floor: {ft_p!r}")
    h = (_mass(x, zt) - _mass(x_pred, zt)) / ft_p
    h -= _log_ratio(ctx, ft_x, ft_p, "normalizer term") / a
    fxv = f_vector(ctx, t, x)
    fpv = f_vector(ctx, t, x_pred)
    if isinstance(x, (int, np.integer)):
        h += _log_ratio(ctx, fxv[int(x)], fpv[int(x)], "clean-token term")
    else:
        h += _weighted_log_ratio_sum(ctx, _as_vector(ctx, x), fxv, fpv, "clean-token term")
    if k > 0.0 and b > 0.0:
        h += _weighted_log_ratio_sum(ctx, np.full(N, k * b / (N * a)), fxv, fpv, "vocabulary sum")
    if mu > 0.0 and b > 0.0:
        h += mu * b / a * _log_ratio(ctx, fxv[m], fpv[m], "mask term")
    return h


def loss_weight(ctx: ScalarContext, t: float, zt: int, x) -> float:
    """``-alpha'_t r(z_t) / f_t(x, z_t)``."""
    zt = _check_index(ctx, zt)
    ft_x = f_map(ctx, t, x, zt)
    if ft_x <= 0.0:
        raise DegenerateDenominatorError(f"f_t(x, z_t) = 0 for z_t={zt}")
    return -float(ctx.schedule.alpha_prime(t)) * ctx.kernel.rate(zt) / ft_x


def loss_term(ctx: ScalarContext, t: float, zt: int, x, x_pred) -> float:
    """Continuous-time loss contribution of one position."""
    w = loss_weight(ctx, t, zt, x)
    if w == 0.0:
        return 0.0
    return w * h_limit(ctx, t, zt, x, x_pred)


def loss_terms_batch(ctx: ScalarContext, t, zt, x0, x_pred):
    """Vectorized :func:`loss_term` and its gradient with respect to ``x_pred``.

    Args:
        t: times, shape ``(B,)``, each in (0, 1).
        zt: corrupted tokens, shape ``(B, L)``.
        x0: clean tokens, shape ``(B, L)``.
        x_pred: predicted distributions, shape ``(B, L, N)``.

    Returns:
        ``(loss, grad)`` with shapes ``(B, L)`` and ``(B, L, N)``.
    """
    kern = ctx.kernel
    N, k, mu, m = kern.N, kern.k, kern.mu, kern.mask_id
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0.0) or np.any(t >= 1.0):
        raise DomainError("t must lie in (0, 1)")
    zt = np.asarray(zt, dtype=np.int64)
    x0 = np.asarray(x0, dtype=np.int64)
    B, L = zt.shape
    r = kern.rates()

    a = np.broadcast_to(np.asarray(ctx.schedule.alpha(t), dtype=float)[:, None], (B, L))
    da = np.broadcast_to(np.asarray(ctx.schedule.alpha_prime(t), dtype=float)[:, None], (B, L))
    b = 1.0 - a
    r_z = r[zt]
    f_xz = a * (x0 == zt) + b * r_z

    loss = np.zeros((B, L))
    grad = np.zeros((B, L, N))
    live = r_z > 0.0
    if not np.any(live):
        return loss, grad
    if np.any(f_xz[live] <= 0.0):
        raise DegenerateDenominatorError("f_t(x, z_t) = 0 at a live position")

    # flatten live positions: arrays below have shape (M,) or (M, N)
    a, b, da, r_z, f_xz = a[live], b[live], da[live], r_z[live], f_xz[live]
    z, x = zt[live], x0[live]
    P = x_pred[live]
    rows = np.arange(len(z))
    eps = ctx.eps_log

    p_xz = (x == z).astype(float)
    fp = a[:, None] * P + b[:, None] * r  # f_t(x_pred, e), shape (M, N)
    fp_z = fp[rows, z]
    fp_x = fp[rows, x]
    fx_x = a + b * r[x]
    if np.any(fp_z <= eps) or np.any(fp_x <= eps):
        raise NumericError("f_t(x_pred, .) at or below floor")

    h = (p_xz - P[rows, z]) / fp_z
    h -= np.log(f_xz / fp_z) / a
    h += np.log(fx_x / fp_x)
    g = np.zeros_like(P)
    g[rows, z] += -(p_xz - P[rows, z]) * a / fp_z**2
    g[rows, x] += -a / fp_x
    if k > 0.0:
        if np.any(fp <= eps):
            raise NumericError("f_t(x_pred, .) at or below floor in vocabulary sum")
        fx = b[:, None] * r + 0.0
        fx[rows, x] += a
        c4 = k * b / (N * a)
        h += c4 * np.log(fx / fp).sum(axis=1)
        g -= (k * b / N)[:, None] / fp
    if mu > 0.0:
        fx_m = a * (x == m) + b * r[m]
        fp_m = fp[:, m]
        if np.any(fp_m <= eps):
            raise NumericError("f_t(x_pred, mask) at or below floor")
        h += mu * b / a * np.log(fx_m / fp_m)
        g[:, m] -= mu * b / fp_m

    w = -da * r_z / f_xz
    loss[live] = w * h
    grad[live] = w[:, None] * g
    return loss, grad
