"""Dense-matrix reference implementations.

These are deliberately naive: the posterior is Bayes' rule evaluated with full
N x N transition matrices, the KL is a direct sum over the N states, and the
two closed-form reductions (pure masking, pure uniform) are written out case
by case. They exist to be slow and obviously correct.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xdlm.errors import DegenerateDenominatorError, DomainError
from xdlm.kernel import MixedKernel, Schedule, dense_Q
from xdlm.scalar import EPS_LOG

__all__ = [
    "MAX_ORACLE_N",
    "DensePosterior",
    "posterior_matrix",
    "kl_matrix",
    "kl_dense",
    "mdlm_posterior",
    "mdlm_kl",
    "udlm_kl",
]

MAX_ORACLE_N = 4096


@dataclass(frozen=True)
class DensePosterior:
    probs: np.ndarray
    denom: float


def _vec(x, N: int) -> np.ndarray:
    if isinstance(x, (int, np.integer)):
        v = np.zeros(N)
        v[int(x)] = 1.0
        return v
    return np.asarray(x, dtype=float)


def _check_n(kernel: MixedKernel):
    if kernel.N > MAX_ORACLE_N:
        raise DomainError(f"oracle is capped at N={MAX_ORACLE_N}, got {kernel.N}")


def posterior_matrix(kernel: MixedKernel, schedule: Schedule, s, t, zt, x) -> DensePosterior:
    """``(Q_{t|s} z_t) * (Q_{s|0}^T x) / (z_t^T Q_{t|0}^T x)``."""
    _check_n(kernel)
    if t < s:
        raise DomainError(f"need s <= t, got s={s}, t={t}")
    N = kernel.N
    z = _vec(int(zt), N)
    xv = _vec(x, N)
    Q_ts = dense_Q(kernel, schedule, s, t)
    Q_s0 = dense_Q(kernel, schedule, 0.0, s)
    Q_t0 = dense_Q(kernel, schedule, 0.0, t)
    denom = float(z @ Q_t0.T @ xv)
    if denom <= 0.0:
        raise DegenerateDenominatorError(f"z_t^T Q_t^T x = 0 for z_t={zt}")
    probs = (Q_ts @ z) * (Q_s0.T @ xv) / denom
    return DensePosterior(probs=probs, denom=denom)


def kl_dense(q: np.ndarray, p: np.ndarray, eps_log: float = EPS_LOG) -> float:
    """sum_e q_e log(q_e / p_e); zero-q terms dropped, p floored at eps_log."""
    total = 0.0
    for qe, pe in zip(q, p):
        if qe > 0.0:
            total += qe * np.log(qe / max(pe, eps_log))
    return float(total)


def kl_matrix(kernel, schedule, s, t, zt, x, x_pred, eps_log: float = EPS_LOG) -> float:
    q = posterior_matrix(kernel, schedule, s, t, zt, x).probs
    p = posterior_matrix(kernel, schedule, s, t, zt, x_pred).probs
    return kl_dense(q, p, eps_log)


def mdlm_posterior(schedule: Schedule, s, t, zt: int, x_pred, mask_id: int) -> np.ndarray:
    """Pure-masking (k = 0) reverse transition, case by case.

    ``x_pred`` must put zero mass on the mask token.
    """
    p = np.asarray(x_pred, dtype=float)
    out = np.zeros_like(p)
    if zt != mask_id:
        out[zt] = 1.0
        return out
    a_s, a_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    b_s, b_t = 1.0 - a_s, 1.0 - a_t
    if s == t:
        out[mask_id] = 1.0
        return out
    for e in range(len(p)):
        if e == mask_id:
            out[e] = b_s / b_t
        else:
            out[e] = (a_s - a_t) / (1.0 - a_t) * p[e]
    return out


def mdlm_kl(schedule: Schedule, s, t, zt: int, x: int, x_pred, mask_id: int) -> float:
    """Masked cross-entropy: ``-(beta_{t|s} alpha_s / beta_t) log p_pred(x)`` at a mask."""
    if zt != mask_id:
        return 0.0
    a_s, a_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    b_ts = 1.0 - a_t / a_s
    return -(b_ts * a_s / (1.0 - a_t)) * float(np.log(x_pred[x]))


def udlm_kl(schedule: Schedule, s, t, zt: int, x, x_pred, N: int) -> float:
    """Pure-uniform (k = 1) KL in the s -> t limit, in ``xbar = N f_t`` form.

    ``-(beta_{t|s} alpha_s / (N alpha_t)) * (N/xbar_i - N/xbar_pred_i
    - sum_j xbar_j/xbar_i log(xbar_pred_i xbar_j / (xbar_pred_j xbar_i)))``
    where i is the active state of z_t and j runs over all states (the
    j = i term is identically zero).
    """
    a_s, a_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    b_t = 1.0 - a_t
    b_ts = 1.0 - a_t / a_s
    xv = _vec(x, N)
    pv = np.asarray(x_pred, dtype=float)
    xbar = N * (a_t * xv + b_t / N)
    xbar_p = N * (a_t * pv + b_t / N)
    i = int(zt)
    total = 0.0
    for j in range(N):
        total += xbar[j] / xbar[i] * np.log(xbar_p[i] * xbar[j] / (xbar_p[j] * xbar[i]))
    bracket = N / xbar[i] - N / xbar_p[i] - total
    return float(-(b_ts * a_s) / (N * a_t) * bracket)
