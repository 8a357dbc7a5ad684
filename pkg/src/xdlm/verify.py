"""Self-check suites comparing the scalar path with the dense oracle.

Each suite returns a :class:`SuiteResult` holding the worst observed error
and the tolerance it is held to. ``run_all`` drives them for ``xdlm verify``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from xdlm import oracle, scalar
from xdlm.denoiser import ToyDenoiser, draw_batch, loss_and_grad, PARAM_ORDER
from xdlm.kernel import LinearSchedule, build_kernel
from xdlm.scalar import ScalarContext, to_prediction

K_GRID = (0.0, 1e-3, 0.1, 0.5, 0.9, 1.0)


@dataclass
class SuiteResult:
    name: str
    max_error: float
    tolerance: float
    trials: int
    passed: bool
    detail: str = ""

    def __post_init__(self):
        # keep the record JSON-friendly whatever numpy scalars the suites hand in
        self.max_error = float(self.max_error)
        self.tolerance = float(self.tolerance)
        self.passed = bool(self.passed)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        extra = f"  ({self.detail})" if self.detail else ""
        return (f"{status} {self.name:<10} max_err={self.max_error:.3e} "
                f"tol={self.tolerance:.1e} trials={self.trials}{extra}")


def random_instance(rng: np.random.Generator, N: int, k: float, clean_token: bool = False,
                    t_range=(0.0, 1.0)):
    """(ctx, s, t, zt, x, x_pred) with s < t and a valid forward path to zt."""
    kern = build_kernel(N, None, k)
    ctx = ScalarContext(kern, LinearSchedule())
    lo, hi = t_range
    while True:
        s, t = np.sort(rng.uniform(lo, hi, 2))
        if t - s > 1e-6 and t < 1.0:
            break
    if clean_token:
        x = int(rng.integers(0, N - 1))
    else:
        x = to_prediction(rng.dirichlet(np.ones(N)), kern.mask_id)
    x_pred = to_prediction(rng.dirichlet(np.ones(N)), kern.mask_id)
    while True:
        zt = int(rng.integers(0, N))
        if scalar.f_map(ctx, t, x, zt) > 0.0:
            return ctx, float(s), float(t), zt, x, x_pred


def suite_posterior(rng, trials: int) -> SuiteResult:
    worst = 0.0
    for _ in range(trials):
        ctx, s, t, zt, x, _ = random_instance(rng, int(rng.integers(2, 65)), float(rng.choice(K_GRID)))
        a = scalar.posterior(ctx, s, t, zt, x)
        b = oracle.posterior_matrix(ctx.kernel, ctx.schedule, s, t, zt, x).probs
        worst = max(worst, float(np.abs(a - b).max()))
    return SuiteResult("posterior", worst, 1e-10, trials, worst <= 1e-10)


def suite_kl(rng, trials: int) -> SuiteResult:
    worst, lowest = 0.0, np.inf
    for _ in range(trials):
        ctx, s, t, zt, x, xp = random_instance(rng, int(rng.integers(2, 65)), float(rng.choice(K_GRID)))
        a = scalar.kl_scalar(ctx, s, t, zt, x, xp)
        b = oracle.kl_matrix(ctx.kernel, ctx.schedule, s, t, zt, x, xp)
        worst = max(worst, abs(a - b))
        lowest = min(lowest, a)
    ok = worst <= 1e-8 and lowest >= -1e-9
    return SuiteResult("kl", worst, 1e-8, trials, ok, f"min_kl={lowest:.2e}")


def suite_mdlm(rng, trials: int) -> SuiteResult:
    worst = 0.0
    for _ in range(trials):
        ctx, s, t, zt, x, xp = random_instance(rng, int(rng.integers(3, 65)), 0.0, clean_token=True)
        m = ctx.kernel.mask_id
        worst = max(worst, abs(scalar.kl_scalar(ctx, s, t, zt, x, xp)
                               - oracle.mdlm_kl(ctx.schedule, s, t, zt, x, xp, m)))
        post = scalar.posterior(ctx, s, t, zt, xp)
        worst = max(worst, float(np.abs(post - oracle.mdlm_posterior(ctx.schedule, s, t, zt, xp, m)).max()))
    return SuiteResult("mdlm", worst, 1e-10, trials, worst <= 1e-10)


def suite_udlm(rng, trials: int) -> SuiteResult:
    worst = 0.0
    for _ in range(trials):
        ctx, s, t, zt, x, xp = random_instance(rng, int(rng.integers(2, 65)), 1.0, t_range=(0.01, 0.99))
        lhs = scalar.kl_prefactor(ctx, s, t, zt, x) * scalar.h_limit(ctx, t, zt, x, xp)
        rhs = oracle.udlm_kl(ctx.schedule, s, t, zt, x, xp, ctx.N)
        worst = max(worst, abs(lhs - rhs))
    return SuiteResult("udlm", worst, 1e-8, trials, worst <= 1e-8)


def limit_gap_ratio(ctx, t, zt, x, xp, big=1e-3, small=1e-4) -> float:
    lim = scalar.h_limit(ctx, t, zt, x, xp)
    g_big = abs(scalar.h_exact(ctx, t - big, t, zt, x, xp) - lim)
    g_small = abs(scalar.h_exact(ctx, t - small, t, zt, x, xp) - lim)
    return g_big / g_small


def suite_limit(rng, trials: int) -> SuiteResult:
    """Gap at 1e-3 over gap at 1e-4 should be ~10 for a first-order rate."""
    ratios = []
    while len(ratios) < trials:
        N = int(rng.integers(3, 65))
        ctx, s, t, zt, x, xp = random_instance(rng, N, float(rng.choice(K_GRID[1:])),
                                               clean_token=True, t_range=(0.05, 0.95))
        ratios.append(limit_gap_ratio(ctx, t, zt, x, xp))
    ratios = np.array(ratios)
    # error is the distance from a 10x ratio in decades; [5, 20] is within log10(2)
    dev = float(np.max(np.abs(np.log10(ratios) - 1.0)))
    ok = bool(np.all((ratios >= 5.0) & (ratios <= 20.0)))
    return SuiteResult("limit", dev, float(np.log10(2.0)), trials, ok,
                       f"ratio range [{ratios.min():.2f}, {ratios.max():.2f}]")


def gradient_check(model: ToyDenoiser, ctx: ScalarContext, x0, seed: int, delta: float = 1e-5):
    """Max per-element relative error between analytic and central-difference gradients."""
    t, zt = draw_batch(ctx, x0, seed)
    _, grads = loss_and_grad(model, ctx, x0, t, zt)
    worst = 0.0
    for name in PARAM_ORDER:
        p = model.params[name]
        flat = p.reshape(-1)
        g = grads[name].reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + delta
            up, _ = loss_and_grad(model, ctx, x0, t, zt)
            flat[i] = old - delta
            down, _ = loss_and_grad(model, ctx, x0, t, zt)
            flat[i] = old
            num = (up - down) / (2 * delta)
            scale = max(abs(num), abs(g[i]), 1e-6)
            worst = max(worst, abs(num - g[i]) / scale)
    return worst


def randomized_toy(rng, N=7, L=6, d=5, radius=1, k=0.3):
    model = ToyDenoiser(N, L, d, radius, seed=int(rng.integers(2**31)))
    for name in PARAM_ORDER:
        model.params[name] = rng.normal(0.0, 0.5, model.params[name].shape)
    ctx = ScalarContext(build_kernel(N, None, k))
    x0 = rng.integers(0, N - 1, (3, L))
    return model, ctx, x0


def suite_gradient(rng, configs: int = 3) -> SuiteResult:
    worst = 0.0
    for i in range(configs):
        model, ctx, x0 = randomized_toy(rng, k=(0.3, 0.0, 1.0)[i % 3])
        worst = max(worst, gradient_check(model, ctx, x0, int(rng.integers(2**31))))
    return SuiteResult("gradient", worst, 1e-4, configs, worst <= 1e-4)


def run_all(seed: int = 0, trials: int = 1000) -> list[SuiteResult]:
    rng = np.random.default_rng(seed)
    small = max(1, trials // 5)
    return [
        suite_posterior(rng, trials),
        suite_kl(rng, trials),
        suite_mdlm(rng, small),
        suite_udlm(rng, small),
        suite_limit(rng, max(1, trials // 20)),
        suite_gradient(rng),
    ]
