"""Denoiser contract, a small numpy denoiser with hand-written backprop, and training.

Any object with ``predict(zt, t) -> probs`` satisfies the contract: ``zt`` is
``(L,)`` or ``(B, L)`` token ids, ``t`` a scalar or ``(B,)`` times, and the
result has shape ``(..., L, N)`` with every row a distribution whose mask
entry is exactly zero.

:class:`ToyDenoiser` sees each position through a small window of
neighbouring tokens, its position and the time, followed by one tanh layer::

    h0 = E[z_i] + sum_o E_o[z_{i+o}] + P[i] + t w
    h1 = tanh(h0 W_h + b_h)
    p  = softmax over non-mask tokens of (h1 W_out + b_out)
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from xdlm.errors import CheckpointError, DomainError
from xdlm.kernel import build_kernel, corrupt, make_schedule
from xdlm.scalar import ScalarContext, loss_terms_batch

log = logging.getLogger(__name__)

PARAM_ORDER = ("tok_emb", "nbr_emb", "pos_emb", "time_emb", "W_h", "b_h", "W_out", "b_out")
MAGIC = b"XDLM"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIII")


class ToyDenoiser:
    def __init__(self, vocab_size: int, seq_len: int, d_model: int = 64,
                 radius: int = 2, mask_id: int | None = None, seed: int = 0):
        self.N = int(vocab_size)
        self.L = int(seq_len)
        self.d = int(d_model)
        self.radius = int(radius)
        self.mask_id = self.N - 1 if mask_id is None else int(mask_id)
        rng = np.random.default_rng(seed)
        N, L, d, R = self.N, self.L, self.d, self.radius
        self.params = {
            "tok_emb": rng.normal(0.0, 0.3, (N, d)),
            "nbr_emb": rng.normal(0.0, 0.3, (2 * R, N, d)),
            "pos_emb": rng.normal(0.0, 0.3, (L, d)),
            "time_emb": rng.normal(0.0, 0.3, d),
            "W_h": rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)),
            "b_h": np.zeros(d),
            # zero output layer: a fresh model predicts uniformly over non-mask tokens
            "W_out": np.zeros((d, N)),
            "b_out": np.zeros(N),
        }

    @property
    def offsets(self) -> list[int]:
        return [o for o in range(-self.radius, self.radius + 1) if o != 0]

    def num_parameters(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "ToyDenoiser":
        other = object.__new__(ToyDenoiser)
        other.__dict__.update(self.__dict__)
        other.params = {k: v.copy() for k, v in self.params.items()}
        return other

    def _neighbours(self, zt: np.ndarray) -> list[np.ndarray]:
        # positions outside the sequence read as the mask token
        R = self.radius
        padded = np.pad(zt, ((0, 0), (R, R)), constant_values=self.mask_id)
        L = zt.shape[1]
        return [padded[:, R + o:R + o + L] for o in self.offsets]

    def forward(self, zt, t):
        """Return ``(probs, cache)`` for a batch ``zt`` of shape (B, L)."""
        P = self.params
        zt = np.asarray(zt, dtype=np.int64)
        B, L = zt.shape
        if L > self.L:
            raise DomainError(f"sequence length {L} exceeds model length {self.L}")
        if zt.size and (zt.min() < 0 or zt.max() >= self.N):
            raise DomainError(f"token ids must lie in [0, {self.N})")
        t = np.broadcast_to(np.asarray(t, dtype=float), (B,))
        nbrs = self._neighbours(zt)
        h0 = P["tok_emb"][zt] + P["pos_emb"][None, :L] + t[:, None, None] * P["time_emb"]
        for j, ids in enumerate(nbrs):
            h0 = h0 + P["nbr_emb"][j][ids]
        h1 = np.tanh(h0 @ P["W_h"] + P["b_h"])
        logits = h1 @ P["W_out"] + P["b_out"]
        logits[..., self.mask_id] = -np.inf
        logits -= logits.max(axis=-1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=-1, keepdims=True)
        return probs, (zt, t, nbrs, h0, h1, probs)

    def predict(self, zt, t) -> np.ndarray:
        zt = np.asarray(zt, dtype=np.int64)
        if zt.ndim == 1:
            return self.forward(zt[None], np.atleast_1d(t)[:1])[0][0]
        return self.forward(zt, t)[0]

    def backward(self, cache, grad_probs: np.ndarray) -> dict:
        """Parameter gradients given ``dLoss/dprobs`` of shape (B, L, N)."""
        P = self.params
        zt, t, nbrs, h0, h1, probs = cache
        L = zt.shape[1]
        d = self.d
        # softmax backward; the mask column has zero probability so gets zero gradient
        dlogits = probs * (grad_probs - (probs * grad_probs).sum(axis=-1, keepdims=True))
        g = {}
        g["W_out"] = h1.reshape(-1, d).T @ dlogits.reshape(-1, self.N)
        g["b_out"] = dlogits.sum(axis=(0, 1))
        da1 = (dlogits @ P["W_out"].T) * (1.0 - h1**2)
        g["W_h"] = h0.reshape(-1, d).T @ da1.reshape(-1, d)
        g["b_h"] = da1.sum(axis=(0, 1))
        dh0 = da1 @ P["W_h"].T
        g["tok_emb"] = np.zeros_like(P["tok_emb"])
        np.add.at(g["tok_emb"], zt.ravel(), dh0.reshape(-1, d))
        g["nbr_emb"] = np.zeros_like(P["nbr_emb"])
        for j, ids in enumerate(nbrs):
            np.add.at(g["nbr_emb"][j], ids.ravel(), dh0.reshape(-1, d))
        g["pos_emb"] = np.zeros_like(P["pos_emb"])
        g["pos_emb"][:L] = dh0.sum(axis=0)
        g["time_emb"] = np.einsum("b,bld->d", t, dh0)
        return g


def predict(model, zt, t) -> np.ndarray:
    return model.predict(zt, t)


@dataclass
class TrainConfig:
    k: float = 0.1
    steps: int = 2000
    batch: int = 32
    lr: float = 1e-2
    seq_len: int = 64
    seed: int = 0
    t_sampling: str = "stratified"
    momentum: float = 0.0
    d_model: int = 64
    radius: int = 2
    schedule: str = "linear"
    schedule_eps: float | None = None
    t_eps: float = 1e-3
    log_every: int = 10

    def __post_init__(self):
        if not 0.0 <= self.k <= 1.0:
            raise DomainError(f"k must lie in [0, 1], got {self.k}")
        for name in ("batch", "seq_len", "d_model", "log_every"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.steps < 0:
            raise DomainError(f"steps must be >= 0, got {self.steps}")
        if self.radius < 0:
            raise DomainError(f"radius must be >= 0, got {self.radius}")
        if not self.lr > 0.0:
            raise DomainError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise DomainError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.t_sampling not in ("stratified", "uniform"):
            raise DomainError(f"t_sampling must be 'stratified' or 'uniform', got {self.t_sampling!r}")
        if not 0.0 < self.t_eps < 0.5:
            raise DomainError(f"t_eps must lie in (0, 0.5), got {self.t_eps}")


def sample_times(rng: np.random.Generator, B: int, how: str = "stratified",
                 t_eps: float = 1e-3) -> np.ndarray:
    """Per-sequence times in [t_eps, 1 - t_eps]; stratified uses (i + u) / B."""
    if how == "stratified":
        u = (np.arange(B) + rng.random()) / B
    elif how == "uniform":
        u = rng.random(B)
    else:
        raise DomainError(f"unknown time sampling {how!r}")
    return t_eps + (1.0 - 2.0 * t_eps) * u


def draw_batch(ctx: ScalarContext, x0_batch, rng, t_sampling="stratified", t_eps=1e-3):
    """Times and corrupted tokens for one batch; consumes ``rng`` in a fixed order."""
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    x0 = np.asarray(x0_batch, dtype=np.int64)
    t = sample_times(rng, x0.shape[0], t_sampling, t_eps)
    zt = corrupt(ctx.kernel, ctx.schedule, x0, t[:, None], rng)
    return t, zt


def loss_and_grad(model, ctx: ScalarContext, x0, t, zt):
    """Mean scalar loss over all positions and its parameter gradients."""
    x0 = np.asarray(x0, dtype=np.int64)
    probs, cache = model.forward(zt, t)
    loss, dprobs = loss_terms_batch(ctx, t, zt, x0, probs)
    n = loss.size
    return float(loss.sum() / n), model.backward(cache, dprobs / n)


def batch_loss(model, ctx: ScalarContext, x0_batch, rng, t_sampling="stratified", t_eps=1e-3):
    """Sample times, corrupt, and return ``(loss, grads)`` for one batch."""
    t, zt = draw_batch(ctx, x0_batch, rng, t_sampling, t_eps)
    return loss_and_grad(model, ctx, x0_batch, t, zt)


@dataclass
class TrainResult:
    model: ToyDenoiser
    history: list = field(default_factory=list)
    config: TrainConfig | None = None


def context_for(config: TrainConfig, vocab_size: int, mask_id: int | None = None) -> ScalarContext:
    kernel = build_kernel(vocab_size, mask_id, config.k)
    opts = {} if config.schedule_eps is None else {"eps": config.schedule_eps}
    return ScalarContext(kernel, make_schedule(config.schedule, **opts))


def sgd_step(model, grads: dict, lr: float, momentum: float = 0.0, velocity: dict | None = None):
    for name in PARAM_ORDER:
        g = grads[name]
        if momentum and velocity is not None:
            v = velocity.setdefault(name, np.zeros_like(g))
            v *= momentum
            v += g
            g = v
        model.params[name] -= lr * g


def train(config: TrainConfig, sequences, vocab_size: int, mask_id: int | None = None,
          model: ToyDenoiser | None = None) -> TrainResult:
    """Plain (or momentum) SGD on the scalar loss.

    ``sequences`` is an array of packed token windows, shape (num_seq, seq_len).
    The history holds one entry every ``log_every`` steps with the mean loss
    over that window.
    """
    data = np.asarray(sequences, dtype=np.int64)
    if data.ndim != 2 or len(data) == 0:
        raise DomainError("corpus must be a non-empty (num_seq, seq_len) array")
    if data.shape[1] != config.seq_len:
        raise DomainError(f"sequences have length {data.shape[1]}, config says {config.seq_len}")
    ctx = context_for(config, vocab_size, mask_id)
    if model is None:
        model = ToyDenoiser(vocab_size, config.seq_len, config.d_model, config.radius,
                            ctx.kernel.mask_id, seed=config.seed)
    rng = np.random.default_rng(config.seed)
    velocity: dict = {}
    history, window = [], []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(data), config.batch)
        loss, grads = batch_loss(model, ctx, data[idx], rng, config.t_sampling, config.t_eps)
        sgd_step(model, grads, config.lr, config.momentum, velocity)
        window.append(loss)
        if step % config.log_every == 0 or step == config.steps:
            mean = float(np.mean(window))
            history.append({"step": step, "loss": mean})
            log.info("step %d loss %.5f", step, mean)
            window = []
    return TrainResult(model=model, history=history, config=config)


def smoothed(history: list, span: int = 5) -> tuple[float, float]:
    """Mean of the first and last ``span`` history entries."""
    losses = [h["loss"] for h in history]
    span = max(1, min(span, len(losses) // 2 or 1))
    return float(np.mean(losses[:span])), float(np.mean(losses[-span:]))


def save_checkpoint(path, model: ToyDenoiser, meta: dict | None = None):
    """Binary parameters plus a ``<path>.json`` sidecar with metadata."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, CHECKPOINT_VERSION, model.N, model.d, model.L))
        for name in PARAM_ORDER:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())
    side = dict(meta or {})
    side["model"] = {"radius": model.radius, "mask_id": model.mask_id,
                     "num_parameters": model.num_parameters()}
    sidecar_path(path).write_text(json.dumps(side, indent=2), encoding="utf-8")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_checkpoint(path) -> tuple[ToyDenoiser, dict]:
    path = Path(path)
    try:
        raw = path.read_bytes()
        meta = json.loads(sidecar_path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise CheckpointError("checkpoint truncated")
    magic, version, N, d, L = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    m = meta.get("model", {})
    model = ToyDenoiser(N, L, d, m.get("radius", 2), m.get("mask_id"))
    offset = _HEADER.size
    for name in PARAM_ORDER:
        shape = model.params[name].shape
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(raw):
            raise CheckpointError("checkpoint truncated")
        model.params[name] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(float)
        offset = end
    if offset != len(raw):
        raise CheckpointError("trailing bytes in checkpoint")
    return model, meta


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
