"""Schedules, noising, loss expectations, reverse sampling, and the
receding-horizon executor."""

import numpy as np
import pytest

from minivla.diffusion import (
    NoiseNet,
    RecedingHorizonExecutor,
    SamplerDivergedError,
    build_schedule,
    diffusion_loss,
    forward_noise,
    predict_noise,
    sample_actions,
)
from minivla.encoders import default_vocabulary
from minivla.model import ModelConfig, init_model_params
from minivla.nn import Tensor


@pytest.fixture(scope="module")
def setup():
    cfg = ModelConfig()
    vocab = default_vocabulary()
    params = init_model_params(cfg, len(vocab), seed=5, dtype=np.float64)
    return cfg, params


# ---------------------------------------------------------------------------
# schedule


def test_schedule_two_step_hand_values():
    sched = build_schedule(2, 0.1, 0.2)
    np.testing.assert_allclose(sched.alpha_bars, [0.9, 0.72])


def test_schedule_alpha_bar_strictly_decreasing():
    sched = build_schedule(17, 1e-3, 0.3)
    assert (np.diff(sched.alpha_bars) < 0).all()
    assert sched.alpha_bar(sched.k_steps) < sched.alpha_bar(1)


def test_schedule_default_terminal_value():
    # direct product oracle, evaluated independently of cumprod
    sched = build_schedule(50, 1e-4, 0.02)
    prod = 1.0
    for i in range(50):
        prod *= 1.0 - (1e-4 + i * (0.02 - 1e-4) / 49)
    np.testing.assert_allclose(sched.alpha_bar(50), prod, rtol=1e-12)
    assert abs(sched.alpha_bar(50) - 0.602) < 5e-3


def test_schedule_clean_sample_convention():
    sched = build_schedule(10, 1e-4, 0.02)
    assert sched.alpha_bar(0) == 1.0


@pytest.mark.parametrize("k,start,end", [(1, 0.1, 0.2), (5, 0.0, 0.2), (5, 0.1, 1.0), (5, 0.2, 0.1)])
def test_schedule_rejects_bad_bounds(k, start, end):
    with pytest.raises(ValueError):
        build_schedule(k, start, end)


# ---------------------------------------------------------------------------
# forward noising


def test_forward_noise_zero_eps():
    sched = build_schedule(10, 0.05, 0.2)
    chunk = np.linspace(-1, 1, 24).reshape(8, 3)
    out = forward_noise(chunk, 4, np.zeros_like(chunk), sched)
    np.testing.assert_allclose(out, np.sqrt(sched.alpha_bar(4)) * chunk)


def test_forward_noise_exact_inversion():
    sched = build_schedule(50, 1e-4, 0.02)
    rng = np.random.default_rng(0)
    chunk = rng.uniform(-1, 1, (8, 3))
    eps = rng.standard_normal((8, 3))
    k = 31
    noised = forward_noise(chunk, k, eps, sched)
    ab = sched.alpha_bar(k)
    recovered = (noised - np.sqrt(1 - ab) * eps) / np.sqrt(ab)
    np.testing.assert_allclose(recovered, chunk, rtol=1e-12)


def test_forward_noise_variance_monte_carlo():
    sched = build_schedule(50, 1e-4, 0.02)
    k = 25
    rng = np.random.default_rng(1)
    eps = rng.standard_normal(100_000)
    out = forward_noise(np.zeros(100_000), k, eps, sched)
    want = 1.0 - sched.alpha_bar(k)
    assert abs(out.var() - want) <= 0.01 * want + 0.01


def test_forward_noise_rejects_out_of_range_step():
    sched = build_schedule(10, 0.05, 0.2)
    for k in (0, 11):
        with pytest.raises(ValueError):
            forward_noise(np.zeros((8, 3)), k, np.zeros((8, 3)), sched)


# ---------------------------------------------------------------------------
# noise net


def test_predict_noise_output_shape(setup):
    cfg, params = setup
    rng = np.random.default_rng(2)
    cond = Tensor(rng.standard_normal((4, 64)))
    chunk = rng.standard_normal((4, 8, 3))
    for k in (1, 25, 50):
        out = predict_noise(params, cfg, chunk, np.full(4, k), cond)
        assert out.shape == (4, 8, 3)


def test_conditioning_is_live(setup):
    cfg, params = setup
    rng = np.random.default_rng(3)
    chunk = rng.standard_normal((1, 8, 3))
    k = np.array([10])
    out1 = predict_noise(params, cfg, chunk, k, Tensor(rng.standard_normal((1, 64)))).data
    out2 = predict_noise(params, cfg, chunk, k, Tensor(rng.standard_normal((1, 64)))).data
    assert np.abs(out1 - out2).max() > 0


def test_step_embedding_is_live(setup):
    cfg, params = setup
    rng = np.random.default_rng(4)
    chunk = rng.standard_normal((1, 8, 3))
    cond = Tensor(rng.standard_normal((1, 64)))
    out1 = predict_noise(params, cfg, chunk, np.array([1]), cond).data
    out2 = predict_noise(params, cfg, chunk, np.array([50]), cond).data
    assert np.abs(out1 - out2).max() > 0


# ---------------------------------------------------------------------------
# loss


def test_loss_zero_for_perfect_predictor():
    sched = build_schedule(50, 1e-4, 0.02)
    rng = np.random.default_rng(5)
    chunk = rng.uniform(-1, 1, (8, 3))

    drawn = {}

    def oracle(noisy, ks, cond):
        # recover eps exactly from the affine noising identity
        ab = sched.alpha_bars[ks - 1][:, None, None]
        return (noisy - np.sqrt(ab) * chunk[None]) / np.sqrt(1 - ab)

    loss = diffusion_loss(chunk, np.zeros(64), oracle, sched, rng)
    assert float(loss.data) == pytest.approx(0.0, abs=1e-24)


def test_loss_expectation_for_zero_predictor():
    # E[eps^2] = 1 for a unit normal; 1e5 draws keep the MC error << 2%
    sched = build_schedule(50, 1e-4, 0.02)
    rng = np.random.default_rng(6)
    chunks = rng.uniform(-1, 1, (4200, 8, 3))

    def zero_net(noisy, ks, cond):
        return np.zeros_like(noisy)

    loss = float(diffusion_loss(chunks, np.zeros((4200, 64)), zero_net, sched, rng).data)
    assert abs(loss - 1.0) < 0.02


def test_loss_finite_and_nonnegative_for_random_net(setup):
    cfg, params = setup
    sched = cfg.schedule()
    rng = np.random.default_rng(7)
    chunk = rng.uniform(-1, 1, (8, 3))
    loss = float(diffusion_loss(chunk, rng.standard_normal(64), NoiseNet(params, cfg), sched, rng).data)
    assert np.isfinite(loss) and loss >= 0


# ---------------------------------------------------------------------------
# reverse sampling


def test_zero_net_deterministic_sampler_closed_form():
    sched = build_schedule(50, 1e-4, 0.02)

    def zero_net(noisy, ks, cond):
        return np.zeros_like(noisy)

    rng = np.random.default_rng(8)
    seed_draw = np.random.default_rng(8).standard_normal((8, 3))
    out = sample_actions(None, zero_net, sched, rng, deterministic=True)
    want = np.clip(seed_draw / np.sqrt(sched.alpha_bar(50)), -1.2, 1.2)
    np.testing.assert_allclose(out, want, rtol=1e-10)


def test_sampler_bitwise_repeatable(setup):
    cfg, params = setup
    sched = cfg.schedule()
    net = NoiseNet(params, cfg)
    cond = np.random.default_rng(9).standard_normal((1, 64))
    a = sample_actions(cond, net, sched, np.random.default_rng(10))
    b = sample_actions(cond, net, sched, np.random.default_rng(10))
    assert np.array_equal(a, b)


def test_sampler_stochastic_mode_runs(setup):
    cfg, params = setup
    sched = cfg.schedule()
    net = NoiseNet(params, cfg)
    cond = np.random.default_rng(11).standard_normal((1, 64))
    out = sample_actions(cond, net, sched, np.random.default_rng(12), deterministic=False)
    assert out.shape == (8, 3) and np.isfinite(out).all()
    assert np.abs(out).max() <= 1.2


def test_sampler_reports_divergence_step():
    sched = build_schedule(50, 1e-4, 0.02)

    def nan_net(noisy, ks, cond):
        return np.full_like(noisy, np.nan)

    with pytest.raises(SamplerDivergedError, match="k="):
        sample_actions(None, nan_net, sched, np.random.default_rng(13))


def test_clamp_bounds_final_chunk():
    sched = build_schedule(50, 1e-4, 0.02)

    def big_net(noisy, ks, cond):
        return np.full_like(noisy, -50.0)

    out = sample_actions(None, big_net, sched, np.random.default_rng(14))
    assert np.abs(out).max() <= 1.2


# ---------------------------------------------------------------------------
# receding-horizon executor


def make_executor(record):
    def plan(window):
        record.append(tuple(np.asarray(w).ravel()[0] for w in window))
        return np.arange(24, dtype=float).reshape(8, 3)

    return RecedingHorizonExecutor(plan, horizon=8, n_exec=4, window=2)


def test_eight_steps_make_exactly_two_plans():
    record = []
    ex = make_executor(record)
    for i in range(8):
        ex.step(np.array([float(i)]))
    assert ex.plans_made == 2
    assert len(record) == 2


def test_window_holds_two_most_recent_observations():
    record = []
    ex = make_executor(record)
    for i in range(5):
        ex.step(np.array([float(i)]))
    assert list(x[0] for x in ex.window) == [3.0, 4.0]
    assert record[1] == (3.0, 4.0)


def test_executor_pops_chunk_prefix_in_order():
    ex = RecedingHorizonExecutor(lambda w: np.arange(24, dtype=float).reshape(8, 3), horizon=8, n_exec=4)
    got = [ex.step(np.zeros(1)) for _ in range(4)]
    np.testing.assert_array_equal(np.stack(got), np.arange(12, dtype=float).reshape(4, 3))


def test_executor_rejects_missing_observation():
    ex = make_executor([])
    with pytest.raises(ValueError):
        ex.step(None)


def test_flush_forces_replan_but_keeps_window():
    record = []
    ex = make_executor(record)
    ex.step(np.array([0.0]))
    ex.flush()
    ex.step(np.array([1.0]))
    assert ex.plans_made == 2
    assert record[1] == (0.0, 1.0)


def test_identical_stream_and_seed_give_identical_actions(setup):
    cfg, params = setup
    from minivla.model import VLAPolicy

    vocab = default_vocabulary()
    rng = np.random.default_rng(15)
    frames = (rng.random((6, 2, 3, 48, 48)) * 255).astype(np.uint8)

    def run():
        policy = VLAPolicy(params, cfg, vocab, seed=3)
        policy.set_instruction("open the drawer")
        return np.stack([policy.act(f) for f in frames])

    np.testing.assert_array_equal(run(), run())
