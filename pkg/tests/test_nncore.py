import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import relative_errors
from oracles import finite_difference
from timbreswap import nncore


def small_net():
    return nncore.mlp([5, 7, 6, 3], "silu", "none", [nncore.Embedding("cond", 4, 2)])


def test_param_shapes_and_init():
    spec = small_net()
    assert spec.input_dim == 3  # 5 minus the 2-dim embedding
    p = nncore.init_params(spec, 0)
    assert p.shapes == spec.param_shapes()
    assert all(v.dtype == np.float32 for v in p.arrays.values())
    assert not np.any(p["l0.b"])
    limit = np.sqrt(6 / (5 + 7))
    assert np.all(np.abs(p["l0.W"]) <= limit)


def test_init_streams_are_per_name():
    a = nncore.init_params(nncore.mlp([4, 4, 4], "relu"), 3)
    b = nncore.init_params(nncore.mlp([4, 4, 4, 2], "relu"), 3)
    # same name and seed give the same array whatever the rest of the net looks like
    np.testing.assert_array_equal(a["l0.W"], b["l0.W"])
    assert not np.array_equal(a["l0.W"], a["l1.W"])


def test_spec_validation():
    with pytest.raises(ValueError):
        nncore.NetSpec((nncore.Dense(3, 4), nncore.Dense(5, 2)))
    with pytest.raises(ValueError):
        nncore.NetSpec((nncore.Dense(3, 4, "tanh"),))


def test_forward_shape_errors():
    spec = small_net()
    p = nncore.init_params(spec, 0)
    with pytest.raises(nncore.ShapeError):
        nncore.forward(spec, p, np.zeros((2, 4)), {"cond": np.zeros(2, int)})
    with pytest.raises(nncore.ShapeError):
        nncore.forward(spec, p, np.zeros((2, 3)))


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("hidden", ["silu", "relu"])
def test_backward_finite_difference(seed, hidden):
    spec = nncore.mlp([6, 8, 8, 4], hidden, "none", [nncore.Embedding("e", 3, 2)])
    errs = relative_errors(spec, seed, max_coords=1000)
    assert np.mean(errs < 1e-4) >= 0.99


def test_input_gradient():
    spec = nncore.mlp([3, 5, 2], "silu")
    p = nncore.init_params(spec, 0).copy(np.float64)
    x = np.random.default_rng(0).standard_normal((2, 3))
    r = np.array([[1.0, -2.0], [0.5, 0.3]])
    _, tr = nncore.forward(spec, p, x)
    _, gx = nncore.backward(spec, p, tr, r, return_input_grad=True)
    num = finite_difference(lambda: float(np.sum(r * nncore.forward(spec, p, x)[0])), x, (1, 2))
    assert gx[1, 2] == pytest.approx(num, rel=1e-6)


def test_stale_trace_detected():
    spec = nncore.mlp([3, 4, 2], "relu")
    p = nncore.init_params(spec, 0)
    out, tr = nncore.forward(spec, p, np.ones((1, 3), np.float32))
    g = nncore.backward(spec, p, tr, np.ones_like(out))
    nncore.adam_step(p, g, nncore.AdamState.for_params(p))
    with pytest.raises(nncore.StaleTraceError):
        nncore.backward(spec, p, tr, np.ones_like(out))
    with pytest.raises(nncore.StaleTraceError):
        nncore.backward(spec, p.copy(), tr, np.ones_like(out))


def _loss_fd(loss_fn, a, b):
    val, grad = loss_fn(a, b)
    for idx in [(0, 0), (1, 2), (2, 1)]:
        num = finite_difference(lambda: loss_fn(a, b)[0], a, idx)
        assert grad[idx] == pytest.approx(num, rel=1e-6, abs=1e-10)
    return val


def test_loss_gradients():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    _loss_fd(nncore.mse, a, b)
    _loss_fd(nncore.cosine_loss, a, b)
    _loss_fd(lambda x, y: nncore.cross_entropy(x, y), a, np.array([0, 3, 1]))


def test_loss_values():
    assert nncore.mse(np.array([1.0, 3.0]), np.array([0.0, 0.0]))[0] == pytest.approx(5.0)
    b = np.array([[1.0, 2.0, -1.0]])
    assert nncore.cosine_loss(b.copy(), b)[0] == pytest.approx(0.0, abs=1e-12)
    assert nncore.cosine_loss(np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]]))[0] == pytest.approx(1.0)
    # uniform logits: CE = log K
    assert nncore.cross_entropy(np.zeros((1, 6)), [2])[0] == pytest.approx(np.log(6))
    with pytest.raises(ValueError):
        nncore.cosine_loss(np.zeros((1, 3)), np.ones((1, 3)))


def test_cross_entropy_extreme_logits_finite():
    v, g = nncore.cross_entropy(np.array([[1000.0, -1000.0, 0.0]]), [1])
    assert np.isfinite(v) and np.all(np.isfinite(g))
    assert v == pytest.approx(2000.0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=2, max_size=8))
def test_softmax_normalized(logits):
    p = nncore.softmax(np.array([logits]))
    assert np.all(p >= 0) and abs(p.sum() - 1) < 1e-9


def test_adam_first_step_closed_form():
    p = nncore.ParamStore({"w": np.array([1.0, -2.0, 0.5])})
    st_ = nncore.AdamState.for_params(p, lr=0.1)
    g = {"w": np.array([0.3, -4.0, 0.0])}
    nncore.adam_step(p, g, st_)
    # bias-corrected first step moves by lr * g / (|g| + eps)
    expect = np.array([1.0, -2.0, 0.5]) - 0.1 * g["w"] / (np.abs(g["w"]) + 1e-8)
    np.testing.assert_allclose(p["w"], expect, rtol=1e-7)
    assert p.version == 1 and st_.step == 1


def test_adam_converges_on_quadratic():
    p = nncore.ParamStore({"w": np.array([5.0, -3.0])})
    st_ = nncore.AdamState.for_params(p, lr=0.1)
    for _ in range(500):
        nncore.adam_step(p, {"w": 2 * p["w"]}, st_)
    assert np.all(np.abs(p["w"]) < 1e-2)


def test_adam_rejects_nonfinite():
    p = nncore.ParamStore({"w": np.zeros(2)})
    with pytest.raises(nncore.NonFiniteGradient):
        nncore.adam_step(p, {"w": np.array([np.nan, 0.0])}, nncore.AdamState.for_params(p))


def test_checkpoint_roundtrip(tmp_path):
    spec = small_net()
    p = nncore.init_params(spec, 4)
    out, tr = nncore.forward(spec, p, np.ones((2, 3), np.float32), {"cond": np.array([0, 3])})
    state = nncore.AdamState.for_params(p)
    nncore.adam_step(p, nncore.backward(spec, p, tr, np.ones_like(out)), state)
    nncore.save_checkpoint(tmp_path / "c.dtne", p, state, {"stage": "x", "note": "hi"})
    q, st2, meta = nncore.load_checkpoint(tmp_path / "c.dtne")
    assert q.bit_equal(p)
    assert meta == {"stage": "x", "note": "hi"}
    assert st2.step == 1 and all(np.array_equal(st2.m[k], state.m[k]) for k in p.names())
    # writing twice gives the same bytes
    nncore.save_checkpoint(tmp_path / "d.dtne", p, state, {"stage": "x", "note": "hi"})
    assert (tmp_path / "c.dtne").read_bytes() == (tmp_path / "d.dtne").read_bytes()


def test_checkpoint_errors(tmp_path):
    p = nncore.ParamStore({"w": np.ones((2, 2), np.float32)})
    path = tmp_path / "c.dtne"
    nncore.save_checkpoint(path, p)
    data = path.read_bytes()
    (tmp_path / "bad").write_bytes(b"XXXXX" + data[5:])
    with pytest.raises(nncore.BadMagic):
        nncore.load_checkpoint(tmp_path / "bad")
    (tmp_path / "ver").write_bytes(data[:5] + b"\x09\x00" + data[7:])
    with pytest.raises(nncore.BadVersion):
        nncore.load_checkpoint(tmp_path / "ver")
    (tmp_path / "cut").write_bytes(data[:-3])
    with pytest.raises(nncore.Truncated):
        nncore.load_checkpoint(tmp_path / "cut")
