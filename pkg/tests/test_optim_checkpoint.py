"""Adam freeze contract, gradient_check harness, and checkpoint round trips."""

import numpy as np
import pytest

import minivla.nn.autodiff as ad
from minivla.nn import (
    CheckpointError,
    MissingGradientError,
    NonDeterministicClosureError,
    OptimizerState,
    ParameterSet,
    Tensor,
    adam_step,
    clip_grad_norm,
    gradient_check,
    linear_forward,
    load_checkpoint,
    save_checkpoint,
)


def toy_params(rng, frozen=()):
    params = ParameterSet()
    params.add("a.w", rng.standard_normal((3, 2)))
    params.add("a.b", rng.standard_normal(2))
    params.add("b.w", rng.standard_normal((2, 2)))
    params.freeze_prefixes(frozen)
    return params


def test_adam_all_frozen_is_bit_identical():
    rng = np.random.default_rng(0)
    params = toy_params(rng, frozen=("a.", "b."))
    before = {n: t.data.copy() for n, t in params.items()}
    opt = OptimizerState(lr=0.1)
    adam_step(params, opt)
    assert opt.step == 1
    for n, t in params.items():
        assert t.data.tobytes() == before[n].tobytes()


def test_adam_first_step_moves_by_lr():
    # bias-corrected first step with grad 1 moves by lr/(1 + eps')
    params = ParameterSet()
    p = params.add("x", np.array([1.0]))
    p.grad = np.array([1.0])
    adam_step(params, OptimizerState(lr=0.1))
    np.testing.assert_allclose(p.data, [1.0 - 0.1], atol=1e-8)


def test_adam_zero_gradient_leaves_parameters_unchanged():
    rng = np.random.default_rng(1)
    params = toy_params(rng)
    before = {n: t.data.copy() for n, t in params.items()}
    for _, t in params.items():
        t.grad = np.zeros_like(t.data)
    adam_step(params, OptimizerState(lr=0.1))
    for n, t in params.items():
        np.testing.assert_array_equal(t.data, before[n])


def test_adam_missing_gradient_names_parameter():
    rng = np.random.default_rng(2)
    params = toy_params(rng)
    params["a.w"].grad = np.ones((3, 2))
    with pytest.raises(MissingGradientError, match="a.b"):
        adam_step(params, OptimizerState(lr=0.1))


def test_adam_clears_gradients():
    params = ParameterSet()
    p = params.add("x", np.array([1.0]))
    p.grad = np.array([1.0])
    adam_step(params, OptimizerState(lr=0.1))
    assert p.grad is None


def test_frozen_parameters_collect_no_gradients():
    rng = np.random.default_rng(3)
    params = toy_params(rng, frozen=("a.",))
    x = Tensor(rng.standard_normal((4, 3)))
    loss = linear_forward(linear_forward(x, params["a.w"], params["a.b"]), params["b.w"]).sum()
    ad.backward(loss)
    assert params["a.w"].grad is None
    assert params["b.w"].grad is not None


def test_clip_grad_norm_scales_to_bound():
    params = ParameterSet()
    p = params.add("x", np.zeros(4))
    p.grad = np.full(4, 2.0)
    norm = clip_grad_norm(params, 1.0)
    np.testing.assert_allclose(norm, 4.0)
    np.testing.assert_allclose(np.linalg.norm(p.grad), 1.0)


# ---------------------------------------------------------------------------
# gradient_check harness


def softmax_toy_closure(params):
    x = Tensor(np.linspace(-1.0, 1.0, 12).reshape(4, 3))
    h = linear_forward(x, params["w"], params["b"])
    p = ad.softmax(h)
    w = np.arange(8.0).reshape(4, 2)
    return (p * w).sum()


def test_gradient_check_linear_softmax_toy():
    params = ParameterSet()
    rng = np.random.default_rng(4)
    params.add("w", rng.standard_normal((3, 2)))
    params.add("b", rng.standard_normal(2))
    report = gradient_check(softmax_toy_closure, params, tolerance=1e-4)
    assert report.ok(1e-4), report.errors


def test_gradient_check_ignored_parameter_reports_zero():
    params = ParameterSet()
    rng = np.random.default_rng(5)
    params.add("w", rng.standard_normal((3, 2)))
    params.add("b", rng.standard_normal(2))
    params.add("unused", rng.standard_normal(4))

    def closure(p):
        h = linear_forward(Tensor(np.eye(3)), p["w"], p["b"])
        return (h * h).sum()

    report = gradient_check(closure, params)
    assert report.errors["unused"] == 0.0


def test_gradient_check_flags_corrupted_backward(monkeypatch):
    params = ParameterSet()
    rng = np.random.default_rng(6)
    params.add("w", rng.standard_normal((3, 2)))
    params.add("b", rng.standard_normal(2))

    original = ad.mul

    def corrupted_mul(a, b):
        out = original(a, b)
        if out._backward is not None:
            inner = out._backward

            def bad(g):
                inner(g * 1.5)

            out._backward = bad
        return out

    monkeypatch.setattr(ad, "mul", corrupted_mul)
    report = gradient_check(softmax_toy_closure, params)
    assert not report.ok(1e-4)
    assert report.worst_param in ("w", "b")


def test_gradient_check_rejects_nondeterministic_closure():
    params = ParameterSet()
    params.add("w", np.ones((2, 2)))
    state = {"n": 0}

    def closure(p):
        state["n"] += 1
        return (p["w"] * float(state["n"])).sum()

    with pytest.raises(NonDeterministicClosureError):
        gradient_check(closure, params)


# ---------------------------------------------------------------------------
# checkpoint container


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    params = toy_params(rng, frozen=("b.",))
    path = str(tmp_path / "model.rbbt")
    save_checkpoint(params, path)
    loaded = load_checkpoint(path)
    assert loaded.names() == params.names()
    for n, t in params.items():
        np.testing.assert_array_equal(loaded[n].data, t.data.astype(np.float32))
    assert loaded.frozen_names() == ["b.w"]


def test_checkpoint_header(tmp_path):
    params = ParameterSet()
    params.add("x", np.zeros(1))
    path = str(tmp_path / "m.rbbt")
    save_checkpoint(params, path)
    blob = open(path, "rb").read()
    assert blob[:4] == b"RBBT"


def test_checkpoint_float32_save_is_stable(tmp_path):
    rng = np.random.default_rng(8)
    params = toy_params(rng)
    p1 = str(tmp_path / "a.rbbt")
    p2 = str(tmp_path / "b.rbbt")
    save_checkpoint(params, p1)
    save_checkpoint(load_checkpoint(p1), p2)
    assert open(p1, "rb").read() == open(p2, "rb").read()


def test_checkpoint_rejects_bad_magic(tmp_path):
    path = tmp_path / "junk.rbbt"
    path.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(CheckpointError, match="magic"):
        load_checkpoint(str(path))


def test_checkpoint_rejects_truncation(tmp_path):
    rng = np.random.default_rng(9)
    params = toy_params(rng)
    path = str(tmp_path / "m.rbbt")
    save_checkpoint(params, path)
    blob = open(path, "rb").read()
    (tmp_path / "cut.rbbt").write_bytes(blob[:-3])
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(str(tmp_path / "cut.rbbt"))
