import numpy as np
import pytest

from xdlm import oracle
from xdlm.errors import DomainError, NumericError
from xdlm.kernel import LinearSchedule, build_kernel
from xdlm.scalar import (
    ScalarContext, f_map, f_vector, h_exact, h_limit, kl_prefactor, kl_scalar, loss_term,
    loss_terms_batch, loss_weight, noise_rate, posterior, to_prediction,
)


def ctx_for(N=10, k=0.1):
    return ScalarContext(build_kernel(N, None, k), LinearSchedule())


def rand_pred(rng, ctx):
    return to_prediction(rng.dirichlet(np.ones(ctx.N)), ctx.kernel.mask_id)


def test_noise_rate_examples():
    ctx = ctx_for()
    assert noise_rate(ctx, 0) == pytest.approx(0.01, abs=1e-15)
    assert noise_rate(ctx, 9) == pytest.approx(0.91, abs=1e-15)
    assert sum(noise_rate(ctx, e) for e in range(10)) == pytest.approx(1.0, abs=1e-15)


def test_f_map_examples():
    ctx = ctx_for()
    p = np.zeros(10)
    p[3] = 0.2
    p[0] = 0.8
    assert f_map(ctx, 0.0, p, 3) == pytest.approx(0.2)
    assert f_map(ctx, 1.0, p, 3) == pytest.approx(noise_rate(ctx, 3))
    # alpha_t = 0.5 on the linear schedule at t = 0.5
    assert f_map(ctx, 0.5, p, 3) == pytest.approx(0.105, abs=1e-15)


def test_token_and_onehot_agree():
    ctx = ctx_for(8, 0.4)
    onehot = np.eye(8)[2]
    for e in range(8):
        assert f_map(ctx, 0.3, 2, e) == pytest.approx(f_map(ctx, 0.3, onehot, e), abs=1e-16)


def test_normalization_identity():
    rng = np.random.default_rng(0)
    for _ in range(50):
        N = int(rng.integers(2, 20))
        ctx = ctx_for(N, float(rng.uniform()))
        x = rng.dirichlet(np.ones(N))
        s, t = np.sort(rng.uniform(0, 0.999, 2))
        a_ts = ctx.schedule.alpha_ts(s, t)
        r = ctx.kernel.rates()
        fs = f_vector(ctx, s, x)
        for zt in range(N):
            f_ts = a_ts * (np.arange(N) == zt) + (1 - a_ts) * r[zt]
            assert fs @ f_ts == pytest.approx(f_map(ctx, t, x, zt), abs=1e-12)


def test_posterior_examples():
    ctx = ctx_for(6, 0.3)
    rng = np.random.default_rng(1)
    x = rand_pred(rng, ctx)
    np.testing.assert_array_equal(posterior(ctx, 0.4, 0.4, 2, x), np.eye(6)[2])
    c0 = ctx_for(6, 0.0)
    np.testing.assert_allclose(posterior(c0, 0.2, 0.7, 3, x), np.eye(6)[3], atol=1e-15)


def test_posterior_matches_oracle_n5():
    rng = np.random.default_rng(2)
    ctx = ctx_for(5, 0.3)
    for _ in range(20):
        x = rng.dirichlet(np.ones(5))
        s, t = np.sort(rng.uniform(0, 0.99, 2))
        for zt in range(5):
            a = posterior(ctx, s, t, zt, x)
            b = oracle.posterior_matrix(ctx.kernel, ctx.schedule, s, t, zt, x).probs
            np.testing.assert_allclose(a, b, atol=1e-12)


def test_kl_examples():
    rng = np.random.default_rng(3)
    ctx = ctx_for(6, 0.3)
    x = rand_pred(rng, ctx)
    assert kl_scalar(ctx, 0.2, 0.5, 1, x, x) == pytest.approx(0.0, abs=1e-14)
    assert h_exact(ctx, 0.2, 0.5, 1, x, x) == pytest.approx(0.0, abs=1e-14)
    assert h_limit(ctx, 0.5, 1, x, x) == pytest.approx(0.0, abs=1e-14)
    c0 = ctx_for(6, 0.0)
    assert kl_scalar(c0, 0.2, 0.5, 1, 1, rand_pred(rng, c0)) == 0.0
    for _ in range(20):
        xp = rand_pred(rng, ctx)
        xx = rand_pred(rng, ctx)
        s, t = np.sort(rng.uniform(0, 0.99, 2))
        zt = int(rng.integers(0, 6))
        dense = oracle.kl_matrix(ctx.kernel, ctx.schedule, s, t, zt, xx, xp)
        assert kl_scalar(ctx, s, t, zt, xx, xp) == pytest.approx(dense, abs=1e-8)
        ratio = dense / kl_prefactor(ctx, s, t, zt, xx)
        assert h_exact(ctx, s, t, zt, xx, xp) == pytest.approx(ratio, abs=1e-8)


def test_k0_mask_collapses_to_cross_entropy():
    rng = np.random.default_rng(4)
    ctx = ctx_for(7, 0.0)
    m = ctx.kernel.mask_id
    for _ in range(20):
        xp = rand_pred(rng, ctx)
        x = int(rng.integers(0, m))
        s, t = np.sort(rng.uniform(0.01, 0.99, 2))
        a_s, a_t = 1 - s, 1 - t
        expected = -(a_s - a_t) / (1 - a_t) * np.log(xp[x])
        assert kl_scalar(ctx, s, t, m, x, xp) == pytest.approx(expected, abs=1e-10)
        assert loss_term(ctx, t, m, x, xp) == pytest.approx(-np.log(xp[x]) / t, abs=1e-10)


def test_loss_weight_linear():
    rng = np.random.default_rng(5)
    ctx = ctx_for(9, 0.2)
    for _ in range(10):
        t = float(rng.uniform(0.01, 0.99))
        x, zt = int(rng.integers(0, 8)), int(rng.integers(0, 9))
        expected = noise_rate(ctx, zt) / f_map(ctx, t, x, zt)
        assert loss_weight(ctx, t, zt, x) == expected


def test_loss_perfect_prediction_near_zero():
    ctx = ctx_for(9, 0.2)
    xp = to_prediction(np.eye(9)[3] + 1e-9, ctx.kernel.mask_id)
    for zt in range(9):
        assert abs(loss_term(ctx, 0.4, zt, 3, xp)) < 1e-6


def test_limit_rate_first_order():
    rng = np.random.default_rng(6)
    ctx = ctx_for(8, 0.3)
    xp = rand_pred(rng, ctx)
    t, zt, x = 0.6, 2, 5
    lim = h_limit(ctx, t, zt, x, xp)
    gaps = [abs(h_exact(ctx, t - d, t, zt, x, xp) - lim) for d in (1e-2, 1e-3, 1e-4)]
    assert 5 < gaps[0] / gaps[1] < 20
    assert 5 < gaps[1] / gaps[2] < 20


def test_nonnegative():
    rng = np.random.default_rng(7)
    for _ in range(200):
        N = int(rng.integers(2, 30))
        ctx = ctx_for(N, float(rng.choice([0, 1e-3, 0.1, 0.5, 1.0])))
        xp = rand_pred(rng, ctx)
        x = int(rng.integers(0, max(N - 1, 1)))
        s, t = np.sort(rng.uniform(0.01, 0.99, 2))
        zt = int(rng.integers(0, N))
        if f_map(ctx, t, x, zt) == 0:
            continue
        assert kl_scalar(ctx, s, t, zt, x, xp) >= -1e-9
        assert loss_term(ctx, t, zt, x, xp) >= -1e-9


def test_batch_matches_single_and_gradient():
    rng = np.random.default_rng(8)
    ctx = ctx_for(7, 0.3)
    B, L = 3, 5
    t = rng.uniform(0.05, 0.95, B)
    x0 = rng.integers(0, 6, (B, L))
    zt = rng.integers(0, 7, (B, L))
    pred = np.stack([[rand_pred(rng, ctx) for _ in range(L)] for _ in range(B)])
    loss, grad = loss_terms_batch(ctx, t, zt, x0, pred)
    for b in range(B):
        for i in range(L):
            single = loss_term(ctx, t[b], zt[b, i], x0[b, i], pred[b, i])
            assert loss[b, i] == pytest.approx(single, rel=1e-12, abs=1e-14)
    # directional finite difference of the summed loss
    d = rng.normal(size=pred.shape) * 1e-7
    d[..., ctx.kernel.mask_id] = 0
    up, _ = loss_terms_batch(ctx, t, zt, x0, pred + d)
    down, _ = loss_terms_batch(ctx, t, zt, x0, pred - d)
    assert (up.sum() - down.sum()) / 2 == pytest.approx((grad * d).sum(), rel=1e-5)


def test_errors():
    ctx = ctx_for(5, 0.0)
    with pytest.raises(DomainError):
        posterior(ctx, 0.6, 0.4, 0, 1)
    with pytest.raises(IndexError):
        f_map(ctx, 0.3, 1, 7)
    with pytest.raises(DomainError):
        ScalarContext(build_kernel(5, None, 0.1), LinearSchedule(), eps_log=0.0)
    # zero predicted mass on the clean token at k=0 hits the log floor
    xp = to_prediction(np.array([0.0, 0.5, 0.5, 0.0, 0.0]), 4)
    with pytest.raises(NumericError):
        kl_scalar(ctx, 0.3, 0.6, 4, 0, xp)


def test_to_prediction():
    p = to_prediction(np.array([1.0, 1.0, 2.0]), 2)
    np.testing.assert_allclose(p, [0.5, 0.5, 0.0])
    with pytest.raises(DomainError):
        to_prediction(np.array([0.0, 0.0, 1.0]), 2)
