"""Scalar vs dense-oracle benchmark for posterior + KL evaluation.

Timing uses a monotonic clock, one warmup and at least five timed
repetitions. Transient allocation is the tracemalloc peak above the
starting level during a single evaluation, measured separately from timing.
Timings are reported only after both paths agree on a probe set.
"""

from __future__ import annotations

import gc
import json
import time
import tracemalloc
from dataclasses import asdict, dataclass, field

import numpy as np

from xdlm import oracle
from xdlm.errors import DomainError
from xdlm.kernel import build_kernel
from xdlm.scalar import ScalarContext, kl_scalar, posterior, to_prediction


@dataclass
class BenchRow:
    impl: str
    N: int
    sec_per_1e4_mean: float
    sec_per_1e4_min: float
    peak_bytes: int


@dataclass
class BenchReport:
    rows: list = field(default_factory=list)
    gate: dict = field(default_factory=dict)
    batch: int = 0
    reps: int = 0

    def row(self, impl: str, N: int) -> BenchRow:
        return next(r for r in self.rows if r.impl == impl and r.N == N)

    def speed_ratio(self, N: int) -> float:
        return self.row("scalar", N).sec_per_1e4_mean / self.row("oracle", N).sec_per_1e4_mean

    def memory_exponent(self, impl: str) -> float:
        """Slope of log(peak bytes) against log(N) over the measured N."""
        rows = sorted((r for r in self.rows if r.impl == impl), key=lambda r: r.N)
        x = np.log([r.N for r in rows])
        y = np.log([max(r.peak_bytes, 1) for r in rows])
        return float(np.polyfit(x, y, 1)[0])

    def to_json(self) -> str:
        out = {"batch": self.batch, "reps": self.reps, "gate": self.gate,
               "rows": [asdict(r) for r in self.rows]}
        if len({r.N for r in self.rows}) >= 2:
            out["memory_exponent"] = {i: self.memory_exponent(i) for i in ("scalar", "oracle")}
        return json.dumps(out, indent=2)

    def table(self) -> str:
        lines = [f"{'impl':<8}{'N':>7}{'s/1e4 mean':>14}{'s/1e4 min':>14}{'peak bytes':>14}"]
        for r in self.rows:
            lines.append(f"{r.impl:<8}{r.N:>7}{r.sec_per_1e4_mean:>14.4f}"
                         f"{r.sec_per_1e4_min:>14.4f}{r.peak_bytes:>14d}")
        return "\n".join(lines)


def probe_inputs(N: int, count: int, seed: int = 0, k: float = 0.1):
    """Random (s, t, z_t, x, x_pred) instances for one vocabulary size."""
    rng = np.random.default_rng([seed, N])
    kern = build_kernel(N, None, k)
    out = []
    for _ in range(count):
        s, t = np.sort(rng.uniform(0.05, 0.95, 2))
        x = int(rng.integers(0, N - 1))
        x_pred = to_prediction(rng.dirichlet(np.ones(N)), kern.mask_id)
        zt = int(rng.integers(0, N))
        out.append((float(s), float(t), zt, x, x_pred))
    return kern, out


def _scalar_eval(ctx, inst):
    s, t, zt, x, x_pred = inst
    posterior(ctx, s, t, zt, x_pred)
    return kl_scalar(ctx, s, t, zt, x, x_pred)


def _oracle_eval(ctx, inst):
    s, t, zt, x, x_pred = inst
    oracle.posterior_matrix(ctx.kernel, ctx.schedule, s, t, zt, x_pred)
    return oracle.kl_matrix(ctx.kernel, ctx.schedule, s, t, zt, x, x_pred)


def correctness_gate(ctx, instances) -> dict:
    post_err = kl_err = 0.0
    for s, t, zt, x, x_pred in instances:
        a = posterior(ctx, s, t, zt, x_pred)
        b = oracle.posterior_matrix(ctx.kernel, ctx.schedule, s, t, zt, x_pred).probs
        post_err = max(post_err, float(np.abs(a - b).max()))
        ka = kl_scalar(ctx, s, t, zt, x, x_pred)
        kb = oracle.kl_matrix(ctx.kernel, ctx.schedule, s, t, zt, x, x_pred)
        kl_err = max(kl_err, abs(ka - kb))
    return {"posterior_max_err": float(post_err), "kl_max_err": float(kl_err),
            "passed": bool(post_err <= 1e-10 and kl_err <= 1e-8)}


def peak_allocation(fn, *args) -> int:
    gc.collect()
    started = tracemalloc.is_tracing()
    if not started:
        tracemalloc.start()
    try:
        base, _ = tracemalloc.get_traced_memory()
        tracemalloc.reset_peak()
        fn(*args)
        _, peak = tracemalloc.get_traced_memory()
    finally:
        if not started:
            tracemalloc.stop()
    return max(int(peak - base), 0)


def _time(fn, ctx, instances, reps: int) -> tuple[float, float]:
    for inst in instances:  # warmup
        fn(ctx, inst)
    times = []
    for _ in range(reps):
        start = time.perf_counter()
        for inst in instances:
            fn(ctx, inst)
        times.append((time.perf_counter() - start) / len(instances) * 1e4)
    return float(np.mean(times)), float(np.min(times))


def run_bench(Ns=(64, 256, 1024), batch: int = 32, reps: int = 5, seed: int = 0,
              k: float = 0.1, probes: int = 8) -> BenchReport:
    if reps < 5:
        raise DomainError("need at least 5 timed repetitions")
    if batch < 1:
        raise DomainError("batch must be >= 1")
    for N in Ns:
        if not 2 <= N <= oracle.MAX_ORACLE_N:
            raise DomainError(f"N must lie in [2, {oracle.MAX_ORACLE_N}], got {N}")
    report = BenchReport(batch=batch, reps=reps)
    for N in Ns:
        kern, probe = probe_inputs(N, probes, seed + 1, k)
        ctx = ScalarContext(kern)
        gate = correctness_gate(ctx, probe)
        report.gate[str(N)] = gate
        if not gate["passed"]:
            raise AssertionError(f"scalar and oracle disagree at N={N}: {gate}")
        _, instances = probe_inputs(N, batch, seed, k)
        for impl, fn in (("scalar", _scalar_eval), ("oracle", _oracle_eval)):
            mean, best = _time(fn, ctx, instances, reps)
            peak = max(peak_allocation(fn, ctx, inst) for inst in instances[:3])
            report.rows.append(BenchRow(impl, N, mean, best, peak))
    return report
