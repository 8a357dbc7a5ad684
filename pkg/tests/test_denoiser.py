import struct

import numpy as np
import pytest

from xdlm.denoiser import (
    PARAM_ORDER, ToyDenoiser, TrainConfig, batch_loss, context_for, load_checkpoint,
    loss_and_grad, save_checkpoint, sidecar_path, smoothed, train,
)
from xdlm.errors import CheckpointError, DomainError
from xdlm.kernel import LinearSchedule, build_kernel
from xdlm.scalar import ScalarContext
from xdlm.verify import gradient_check, randomized_toy


def test_fresh_model_uniform_and_mask_free():
    model = ToyDenoiser(9, 6, 8, 1, seed=0)
    p = model.predict(np.array([8, 1, 2, 8, 3, 8]), 0.5)
    assert p.shape == (6, 9)
    assert np.all(p[:, 8] == 0.0)
    np.testing.assert_allclose(p[:, :8], 1 / 8, atol=1e-12)
    rng = np.random.default_rng(0)
    model.params["W_out"] = rng.normal(size=model.params["W_out"].shape)
    p = model.predict(rng.integers(0, 9, (2, 6)), [0.1, 0.9])
    assert np.all(p[..., 8] == 0.0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


def test_forward_rejects_bad_input():
    model = ToyDenoiser(5, 4, 4, 1)
    with pytest.raises(DomainError):
        model.predict(np.zeros(5, dtype=int), 0.5)
    with pytest.raises(DomainError):
        model.predict(np.array([0, 1, 2, 9]), 0.5)


def test_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    for k in (0.3, 0.0, 1.0):
        model, ctx, x0 = randomized_toy(rng, k=k)
        assert gradient_check(model, ctx, x0, int(rng.integers(1000))) <= 1e-4


def test_loss_near_zero_for_perfect_prediction():
    N, L = 6, 5
    ctx = ScalarContext(build_kernel(N, None, 0.2), LinearSchedule())
    model = ToyDenoiser(N, L, 8, 0, seed=0)
    x0 = np.array([[0, 1, 2, 3, 4]])
    # make position i predict token x0[i] with overwhelming confidence, whatever z_t is
    model.params["W_h"][:] = 0
    model.params["b_h"][:] = 0
    model.params["tok_emb"][:] = 0
    model.params["time_emb"][:] = 0
    model.params["pos_emb"][:] = 0
    model.params["pos_emb"][np.arange(L), np.arange(L)] = 5.0
    model.params["W_h"][np.arange(L), np.arange(L)] = 10.0
    model.params["W_out"][np.arange(L), x0[0]] = 60.0
    loss, _ = batch_loss(model, ctx, x0, 0)
    assert 0 <= loss < 1e-6


def test_k0_loss_equals_masked_cross_entropy():
    rng = np.random.default_rng(2)
    N, L = 7, 6
    ctx = ScalarContext(build_kernel(N, None, 0.0), LinearSchedule())
    model = ToyDenoiser(N, L, 6, 1, seed=3)
    model.params["W_out"] = rng.normal(size=(6, N))
    x0 = rng.integers(0, N - 1, (4, L))
    t = rng.uniform(0.05, 0.95, 4)
    zt = np.where(rng.random((4, L)) < t[:, None], N - 1, x0)
    loss, _ = loss_and_grad(model, ctx, x0, t, zt)
    p = model.forward(zt, t)[0]
    ce = -np.log(np.take_along_axis(p, x0[..., None], -1)[..., 0])
    expected = np.mean(np.where(zt == N - 1, ce / t[:, None], 0.0))
    assert loss == pytest.approx(expected, rel=1e-12)


def test_batch_loss_nonnegative():
    rng = np.random.default_rng(3)
    for k in (0.0, 0.1, 0.7, 1.0):
        model, ctx, x0 = randomized_toy(rng, k=k)
        for seed in range(5):
            assert batch_loss(model, ctx, x0, seed)[0] >= -1e-6


def tiny_data(L=8):
    pattern = np.array([0, 1, 2, 3, 2, 1] * 10)
    return np.stack([pattern[i:i + L] for i in range(0, 40, L)])


def test_zero_steps_is_identity():
    cfg = TrainConfig(steps=0, seq_len=8, d_model=8, batch=4)
    res = train(cfg, tiny_data(), 5)
    fresh = ToyDenoiser(5, 8, 8, 2, 4, seed=0)
    assert res.history == []
    for name in PARAM_ORDER:
        np.testing.assert_array_equal(res.model.params[name], fresh.params[name])


def test_training_deterministic():
    cfg = TrainConfig(steps=30, seq_len=8, d_model=8, batch=4, lr=0.05, log_every=5)
    a = train(cfg, tiny_data(), 5)
    b = train(cfg, tiny_data(), 5)
    assert a.history == b.history
    assert len(a.history) == 6


def test_training_halves_loss_on_repeated_pattern():
    cfg = TrainConfig(k=0.1, steps=2000, seq_len=8, d_model=16, batch=16, lr=0.02, momentum=0.9)
    res = train(cfg, tiny_data(), 5)
    first, last = smoothed(res.history)
    assert last <= 0.5 * first


def test_train_config_validation():
    with pytest.raises(DomainError, match="k"):
        TrainConfig(k=1.5)
    with pytest.raises(DomainError):
        TrainConfig(t_sampling="sobol")
    with pytest.raises(DomainError):
        train(TrainConfig(seq_len=4), tiny_data(), 5)


def test_checkpoint_round_trip(tmp_path):
    model = ToyDenoiser(6, 5, 4, 1, seed=9)
    path = tmp_path / "m.bin"
    save_checkpoint(path, model, {"note": "x"})
    raw = path.read_bytes()
    assert struct.unpack_from("<4sIIII", raw) == (b"XDLM", 1, 6, 4, 5)
    assert len(raw) == 20 + 8 * model.num_parameters()
    loaded, meta = load_checkpoint(path)
    assert meta["note"] == "x" and meta["model"]["radius"] == 1
    for name in PARAM_ORDER:
        np.testing.assert_array_equal(loaded.params[name], model.params[name])
    zt = np.array([5, 0, 1, 5, 2])
    np.testing.assert_array_equal(loaded.predict(zt, 0.3), model.predict(zt, 0.3))


def test_checkpoint_errors(tmp_path):
    model = ToyDenoiser(6, 5, 4, 1)
    path = tmp_path / "m.bin"
    save_checkpoint(path, model)
    raw = path.read_bytes()
    path.write_bytes(b"NOPE" + raw[4:])
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(path)
    path.write_bytes(raw[:4] + struct.pack("<I", 2) + raw[8:])
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)
    path.write_bytes(raw[:-8])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(path)
    sidecar_path(path).unlink()
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def test_context_for_schedule():
    ctx = context_for(TrainConfig(schedule="log-linear", schedule_eps=1e-2), 5)
    assert ctx.schedule.alpha(1.0) == pytest.approx(1e-2)
