"""Reverse-process generation: ancestral sampling and confidence remasking.

Both samplers draw categoricals with the Gumbel-max trick. Noise for step
``i`` comes from a Philox stream keyed by ``(seed, i)`` whose row ``j`` belongs
to position ``j``, so results do not depend on evaluation order.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from xdlm.errors import DegenerateDenominatorError, DomainError, ScheduleError
from xdlm.scalar import ScalarContext

__all__ = [
    "Tag",
    "SampleTrace",
    "GenSchedule",
    "default_gen_schedule",
    "gumbel_noise",
    "classify",
    "posterior_batch",
    "ancestral_sample",
    "confidence_generate",
    "eval_generation",
]


class Tag(str, Enum):
    ABSORB_FILL = "ABSORB_FILL"
    UNIFORM_REFINE = "UNIFORM_REFINE"
    REMASK = "REMASK"
    KEEP = "KEEP"


def classify(prev: int, new: int, mask_id: int) -> Tag:
    if prev == new:
        return Tag.KEEP
    if prev == mask_id:
        return Tag.ABSORB_FILL
    if new == mask_id:
        return Tag.REMASK
    return Tag.UNIFORM_REFINE


@dataclass
class SampleTrace:
    """Per-step transition events.

    Each step is ``{"step", "t", "events"}``; events are dicts with ``pos``,
    ``from``, ``to``, ``tag`` and, for the confidence sampler, the confidences
    that justified the move. Only positions that changed are recorded unless
    ``keep_events`` was requested, in which case KEEP events are listed too.
    """

    mask_id: int
    steps: list = field(default_factory=list)

    def add_step(self, step: int, t: float, prev, new, keep_events: bool = False, extra=None):
        events = []
        for pos in range(len(prev)):
            a, b = int(prev[pos]), int(new[pos])
            tag = classify(a, b, self.mask_id)
            if tag is Tag.KEEP and not keep_events:
                continue
            ev = {"pos": pos, "from": a, "to": b, "tag": tag.value}
            if extra is not None and pos in extra:
                ev.update(extra[pos])
            events.append(ev)
        self.steps.append({"step": int(step), "t": float(t), "events": events})

    def count(self, tag: Tag | str) -> int:
        tag = Tag(tag).value
        return sum(ev["tag"] == tag for st in self.steps for ev in st["events"])

    def counts(self) -> dict:
        c = Counter(ev["tag"] for st in self.steps for ev in st["events"])
        return {t.value: c.get(t.value, 0) for t in Tag}

    def to_jsonl(self) -> str:
        return "".join(json.dumps(st) + "\n" for st in self.steps)

    @classmethod
    def from_jsonl(cls, text: str, mask_id: int) -> "SampleTrace":
        return cls(mask_id, [json.loads(line) for line in text.splitlines() if line.strip()])


@dataclass(frozen=True)
class GenSchedule:
    topk_absorb: tuple
    topk_uniform: tuple

    @property
    def steps(self) -> int:
        return len(self.topk_absorb)

    def validate(self, seq_len: int):
        if self.steps < 1:
            raise ScheduleError("schedule needs at least one step")
        if len(self.topk_uniform) != self.steps:
            raise ScheduleError("topk_absorb and topk_uniform must have equal length")
        if any(c < 0 for c in self.topk_absorb) or any(c < 0 for c in self.topk_uniform):
            raise ScheduleError("schedule counts must be non-negative")
        if sum(self.topk_absorb) != seq_len:
            raise ScheduleError(f"topk_absorb sums to {sum(self.topk_absorb)}, need {seq_len}")
        if any(c > seq_len for c in self.topk_uniform):
            raise ScheduleError("topk_uniform entries may not exceed seq_len")


def default_gen_schedule(seq_len: int, steps: int, k: float) -> GenSchedule:
    """Spread seq_len evenly (remainder to the earliest steps); refine round(k * absorb)."""
    if steps < 1:
        raise ScheduleError("steps must be >= 1")
    base, rem = divmod(seq_len, steps)
    absorb = tuple(base + (1 if i < rem else 0) for i in range(steps))
    uniform = tuple(int(round(k * a)) for a in absorb)
    return GenSchedule(absorb, uniform)


def gumbel_noise(seed: int, step: int, shape) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(step)])))
    u = rng.random(shape)
    return -np.log(-np.log(np.clip(u, 1e-300, None)))


def _log(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(p)


def posterior_batch(ctx: ScalarContext, s: float, t: float, zt, x_pred) -> np.ndarray:
    """Scalar posterior for every position at once; ``x_pred`` has shape (L, N)."""
    kern = ctx.kernel
    r = kern.rates()
    a_s = float(ctx.schedule.alpha(s))
    a_t = float(ctx.schedule.alpha(t))
    a_ts = ctx.schedule.alpha_ts(s, t)
    zt = np.asarray(zt, dtype=np.int64)
    rows = np.arange(len(zt))
    f_s = a_s * x_pred + (1.0 - a_s) * r
    denom = a_t * x_pred[rows, zt] + (1.0 - a_t) * r[zt]
    if np.any(denom <= 0.0):
        raise DegenerateDenominatorError("f_t(x_pred, z_t) = 0 at some position")
    q = f_s * ((1.0 - a_ts) * r[zt])[:, None]
    q[rows, zt] += a_ts * f_s[rows, zt]
    return q / denom[:, None]


def ancestral_sample(ctx: ScalarContext, model, seq_len: int, T: int, rng_seed: int,
                     cond=None, keep_events: bool = False):
    """Ancestral sampling over the grid ``t_i = 1 - i / T``.

    ``cond`` is an optional prompt prefix pinned at the first positions.
    Returns ``(tokens, trace)``.
    """
    if T < 1:
        raise DomainError("T must be >= 1")
    kern = ctx.kernel
    N, m = kern.N, kern.mask_id
    init = np.random.default_rng(np.random.SeedSequence([int(rng_seed), 2**31]))
    uniform = init.random(seq_len) < kern.k
    z = np.where(uniform, init.integers(0, N, seq_len), m).astype(np.int64)
    pinned = np.zeros(seq_len, dtype=bool)
    if cond is not None:
        cond = np.asarray(cond, dtype=np.int64)
        z[:len(cond)] = cond
        pinned[:len(cond)] = True
    trace = SampleTrace(m)
    for i in range(T):
        t, s = 1.0 - i / T, 1.0 - (i + 1) / T
        x_pred = model.predict(z, t)
        q = posterior_batch(ctx, max(s, 0.0), t, z, x_pred)
        scores = _log(q) + gumbel_noise(rng_seed, i, q.shape)
        new = np.argmax(scores, axis=-1).astype(np.int64)
        if i == T - 1:
            left = new == m
            if np.any(left):
                new[left] = np.argmax(x_pred[left], axis=-1)
        new[pinned] = z[pinned]
        trace.add_step(i, t, z, new, keep_events)
        z = new
    return z, trace


def _top(priority: np.ndarray, count: int) -> np.ndarray:
    """Indices of the ``count`` largest finite priorities; ties go to the lower index."""
    candidates = np.flatnonzero(np.isfinite(priority))
    if count <= 0 or len(candidates) == 0:
        return np.empty(0, dtype=np.int64)
    order = candidates[np.argsort(-priority[candidates], kind="stable")]
    return order[:count]


def confidence_generate(model, gen: GenSchedule, seq_len: int, mask_id: int, k: float,
                        rng_seed: int, prompt=None, keep_events: bool = False):
    """Low-confidence remasking decoder with the uniform refine branch.

    Each step predicts a Gumbel-noised token per position, fills the
    ``topk_absorb[i]`` most confident masked positions and, when ``k > 0``,
    overwrites up to ``topk_uniform[i]`` unmasked positions whose prediction
    differs from the current token with at least the current token's
    probability. Requests beyond the available candidates are truncated.
    With a prompt, ``topk_absorb`` must sum to ``seq_len - len(prompt)``.
    Returns ``(tokens, trace)``.
    """
    z = np.full(seq_len, mask_id, dtype=np.int64)
    pinned = np.zeros(seq_len, dtype=bool)
    if prompt is not None:
        prompt = np.asarray(prompt, dtype=np.int64)
        if len(prompt) > seq_len:
            raise DomainError("prompt longer than seq_len")
        z[:len(prompt)] = prompt
        pinned[:len(prompt)] = True
    # the absorb schedule covers the generated positions only
    gen.validate(seq_len - int(pinned.sum()))
    trace = SampleTrace(mask_id)
    rows = np.arange(seq_len)
    T = gen.steps
    for i in range(T):
        t = 1.0 - i / T
        is_masked = z == mask_id
        probs = model.predict(z, t)
        pred = np.argmax(_log(probs) + gumbel_noise(rng_seed, i, probs.shape), axis=-1)
        pred_conf = probs[rows, pred]
        mask_priority = np.where(is_masked & ~pinned, pred_conf, -np.inf)
        update = np.zeros(seq_len, dtype=bool)
        update[_top(mask_priority, gen.topk_absorb[i])] = True
        extra = {}
        if k > 0.0:
            cur_conf = probs[rows, z]
            refinable = ~is_masked & ~pinned & (pred != z) & (pred_conf >= cur_conf)
            chosen = _top(np.where(refinable, pred_conf, -np.inf), gen.topk_uniform[i])
            update[chosen] = True
            extra = {int(p): {"pred_conf": float(pred_conf[p]), "cur_conf": float(cur_conf[p])}
                     for p in chosen}
        new = np.where(update, pred, z)
        trace.add_step(i, t, z, new, keep_events, extra)
        z = new
    return z, trace


def eval_generation(samples, reference) -> dict:
    """Token entropy (nats) of the samples and bigram total variation vs the reference.

    ``reference`` is a sequence of token arrays; bigrams never span two arrays.
    """
    samples = [np.asarray(s, dtype=np.int64) for s in samples]
    if not samples:
        raise DomainError("need at least one sample")
    tokens = Counter(int(v) for s in samples for v in s)
    total = sum(tokens.values())
    entropy = -sum(c / total * math.log(c / total) for c in tokens.values()) if total else 0.0

    def bigrams(seqs):
        c = Counter()
        for s in seqs:
            s = np.asarray(s, dtype=np.int64)
            c.update(zip(s[:-1].tolist(), s[1:].tolist()))
        return c

    ps, pr = bigrams(samples), bigrams(reference)
    ns, nr = sum(ps.values()), sum(pr.values())
    if ns == 0 or nr == 0:
        tv = 0.0 if ns == nr else 1.0
    else:
        tv = 0.5 * sum(abs(ps.get(b, 0) / ns - pr.get(b, 0) / nr) for b in set(ps) | set(pr))
    return {"ngram_tv": float(tv), "token_entropy": float(max(entropy, 0.0))}
