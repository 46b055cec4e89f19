import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splat import numerics as nx
from splat.numerics import ParamStore, Tensor


def _central_diff(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp, xm = x.copy(), x.copy()
        xp.flat[i] += eps
        xm.flat[i] -= eps
        g.flat[i] = (f(xp) - f(xm)) / (2 * eps)
    return g


def _rel(a, b, floor=1e-8):
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


# --- affine -----------------------------------------------------------------

def test_affine_identity():
    out = nx.affine([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0])
    np.testing.assert_array_equal(out.data, [[1.0, 0.0]])


def test_affine_scalar():
    assert nx.affine([[2.0]], [[3.0]], [1.0]).data[0, 0] == 7.0


def test_affine_matches_triple_loop():
    rng = np.random.default_rng(3)
    x, W, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    ref = np.zeros((3, 2))
    for i in range(3):
        for j in range(2):
            acc = b[j]
            for k in range(4):
                acc += x[i, k] * W[k, j]
            ref[i, j] = acc
    assert np.max(np.abs(nx.affine(x, W, b).data - ref)) < 1e-12


def test_affine_shape_error_names_both_shapes():
    with pytest.raises(nx.ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        nx.affine(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros(2))


def test_affine_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    x0, W0, b0 = rng.standard_normal((3, 4)), rng.standard_normal((4, 2)), rng.standard_normal(2)
    c = rng.standard_normal((3, 2))
    x, W, b = (Tensor(a.copy(), requires_grad=True) for a in (x0, W0, b0))
    out = nx.affine(x, W, b)
    out.backward(c)
    assert _rel(W.grad, _central_diff(lambda w: np.sum((x0 @ w + b0) * c), W0)) < 1e-6
    assert _rel(x.grad, _central_diff(lambda xx: np.sum((xx @ W0 + b0) * c), x0)) < 1e-6
    assert _rel(b.grad, _central_diff(lambda bb: np.sum((x0 @ W0 + bb) * c), b0)) < 1e-6


# --- softmax ----------------------------------------------------------------

def test_softmax_symmetric():
    np.testing.assert_allclose(nx.softmax([0.0, 0.0]).data, [0.5, 0.5], atol=0)


def test_softmax_no_overflow():
    p = nx.softmax([1000.0, 0.0]).data
    assert abs(p[0] - 1.0) < 1e-12 and p[1] < 1e-12


def test_softmax_matches_direct_formula():
    x = np.random.default_rng(5).standard_normal(7)
    direct = np.exp(x) / np.exp(x).sum()
    p = nx.softmax(x).data
    assert abs(p.sum() - 1.0) < 1e-12
    assert np.max(np.abs(p - direct)) < 1e-15


def test_softmax_rejects_nan():
    with pytest.raises(nx.NonFiniteError):
        nx.softmax([0.0, math.nan])
    with pytest.raises(nx.NonFiniteError):
        nx.softmax([0.0, math.inf])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(xs, c):
    x = np.array(xs)
    p = nx.softmax(x).data
    assert abs(p.sum() - 1.0) <= 1e-12
    assert np.max(np.abs(nx.softmax(x + c).data - p)) <= 1e-10


def test_softmax_backward():
    rng = np.random.default_rng(6)
    x0, c = rng.standard_normal(5), rng.standard_normal(5)
    x = Tensor(x0.copy(), requires_grad=True)
    nx.softmax(x).backward(c)
    num = _central_diff(lambda v: np.sum(np.exp(v) / np.exp(v).sum() * c), x0)
    assert _rel(x.grad, num) < 1e-6


# --- layer norm -------------------------------------------------------------

def test_layer_norm_constant_row():
    np.testing.assert_array_equal(nx.layer_norm([1.0, 1.0, 1.0], np.ones(3), np.zeros(3)).data, [0, 0, 0])


def test_layer_norm_already_normalized():
    out = nx.layer_norm([1.0, -1.0], np.ones(2), np.zeros(2)).data
    assert np.max(np.abs(out - [1.0, -1.0])) < 1e-4


def test_layer_norm_statistics():
    x = np.random.default_rng(7).standard_normal(16) * 3 + 2
    out = nx.layer_norm(x, np.ones(16), np.zeros(16)).data
    assert abs(out.mean()) < 1e-10
    assert abs(out.var() - 1.0) < 1e-3


def test_layer_norm_empty_row():
    with pytest.raises(nx.ShapeError):
        nx.layer_norm(np.zeros((2, 0)), np.zeros(0), np.zeros(0))


def test_layer_norm_backward():
    rng = np.random.default_rng(8)
    x0, g0, b0, c = (rng.standard_normal((3, 5)), rng.standard_normal(5),
                     rng.standard_normal(5), rng.standard_normal((3, 5)))
    x, g, b = (Tensor(a.copy(), requires_grad=True) for a in (x0, g0, b0))
    nx.layer_norm(x, g, b).backward(c)

    def ref(xx, gg=g0, bb=b0):
        mu = xx.mean(-1, keepdims=True)
        var = ((xx - mu) ** 2).mean(-1, keepdims=True)
        return np.sum(((xx - mu) / np.sqrt(var + 1e-5) * gg + bb) * c)

    assert _rel(x.grad, _central_diff(ref, x0)) < 1e-6
    assert _rel(g.grad, _central_diff(lambda gg: ref(x0, gg), g0)) < 1e-6
    assert _rel(b.grad, _central_diff(lambda bb: ref(x0, g0, bb), b0)) < 1e-6


# --- gelu -------------------------------------------------------------------

def test_gelu_zero_and_asymptote():
    assert nx.gelu([0.0]).data[0] == 0.0
    assert abs(nx.gelu([10.0]).data[0] - 10.0) < 1e-3


def test_gelu_closed_form():
    x = 1.0
    ref = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x**3)))
    assert abs(nx.gelu([x]).data[0] - ref) < 1e-15


def test_gelu_monotone_on_grid():
    y = nx.gelu(np.linspace(-0.7, 6, 400)).data
    assert np.all(np.diff(y) > 0)


def test_gelu_backward():
    x0 = np.linspace(-3, 3, 13)
    x = Tensor(x0.copy(), requires_grad=True)
    nx.gelu(x).backward(np.ones(13))
    c = math.sqrt(2 / math.pi)
    num = _central_diff(lambda v: np.sum(0.5 * v * (1 + np.tanh(c * (v + 0.044715 * v**3)))), x0)
    assert _rel(x.grad, num) < 1e-6


# --- cross entropy ----------------------------------------------------------

def test_cross_entropy_uniform():
    assert abs(float(nx.cross_entropy_from_scores([0.0, 0.0], 0).data) - math.log(2)) < 1e-15


def test_cross_entropy_confident():
    assert float(nx.cross_entropy_from_scores([100.0, 0.0], 0).data) < 1e-10


def test_cross_entropy_index_range():
    with pytest.raises(IndexError):
        nx.cross_entropy_from_scores([0.0, 1.0], 2)


def test_cross_entropy_gradient():
    s0 = np.random.default_rng(9).standard_normal(5)
    s = Tensor(s0.copy(), requires_grad=True)
    nx.cross_entropy_from_scores(s, 3).backward()
    num = _central_diff(lambda v: -(v[3] - np.log(np.exp(v).sum())), s0)
    assert _rel(s.grad, num) < 1e-6
    p = np.exp(s0) / np.exp(s0).sum()
    np.testing.assert_allclose(s.grad, p - np.eye(5)[3], atol=1e-15)


def test_mean_cross_entropy_restricted_rows():
    scores = np.array([[1.0, 2.0, 3.0], [0.5, -1.0, 4.0]])
    out = float(nx.mean_cross_entropy(scores, [[0, 2], [0, 1, 2]], [1, 0]).data)
    r0 = -(3.0 - np.log(np.exp(1.0) + np.exp(3.0)))
    r1 = -(0.5 - np.log(np.exp(scores[1]).sum()))
    assert abs(out - (r0 + r1) / 2) < 1e-12


# --- gather / concat --------------------------------------------------------

def test_take_rows_scatters_gradient():
    x = Tensor(np.arange(6.0).reshape(3, 2), requires_grad=True)
    nx.take_rows(x, [0, 2, 0]).backward(np.ones((3, 2)))
    np.testing.assert_array_equal(x.grad, [[2, 2], [0, 0], [1, 1]])


def test_concat_splits_gradient():
    a = Tensor(np.ones((2, 2)), requires_grad=True)
    b = Tensor(np.ones((2, 3)), requires_grad=True)
    nx.concat([a, b]).backward(np.arange(10.0).reshape(2, 5))
    np.testing.assert_array_equal(a.grad, [[0, 1], [5, 6]])
    np.testing.assert_array_equal(b.grad, [[2, 3, 4], [7, 8, 9]])


def test_shared_subexpression_accumulates():
    x = Tensor(np.array([2.0]), requires_grad=True)
    y = nx.add(x, x)
    z = nx.add(y, x)
    z.backward(np.ones(1))
    assert x.grad[0] == 3.0


# --- parameters -------------------------------------------------------------

def _store(seed):
    ps = ParamStore(seed)
    ps.declare("a.W", (4, 3))
    ps.declare("a.b", (3,), "zeros")
    ps.declare("ln.gain", (3,), "ones")
    return ps


def test_param_init_reproducible_and_bounded():
    a, b = _store(11), _store(11)
    for k in a:
        assert a[k].data.tobytes() == b[k].data.tobytes()
    assert np.all(np.abs(a["a.W"].data) <= 0.04)
    assert not np.array_equal(a["a.W"].data, _store(12)["a.W"].data)
    np.testing.assert_array_equal(a["a.b"].data, 0.0)
    np.testing.assert_array_equal(a["ln.gain"].data, 1.0)


def test_param_paths_unique():
    ps = _store(0)
    with pytest.raises(KeyError):
        ps.declare("a.W", (1,))


def test_param_roundtrip(tmp_path):
    ps = _store(5)
    ps["a.W"].data[0, 0] = 1.0 / 3.0
    ps.save(tmp_path / "p.bin")
    back = ParamStore.load(tmp_path / "p.bin")
    assert back.rng_seed == 5 and list(back) == list(ps)
    for k in ps:
        assert back[k].data.tobytes() == ps[k].data.tobytes()


def test_param_load_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"NOTPARAMS")
    with pytest.raises(ValueError, match="magic"):
        ParamStore.load(tmp_path / "x.bin")


# --- gradient checker -------------------------------------------------------

def _sumsq(t):
    flat = nx.Tensor(t.data.reshape(1, -1), t.requires_grad, (t,), lambda g: (g.reshape(t.shape),))
    return nx.dot_scores(flat, flat)


def test_grad_check_quadratic():
    ps = _store(1)
    err, recs = nx.grad_check(lambda p: _sumsq(p["a.W"]), ps, names=["a.W"], n_coords=12)
    assert err < 1e-8
    for _, idx, ana, _ in recs:
        assert abs(ana - 2 * ps["a.W"].data.reshape(-1)[idx]) < 1e-15


def test_grad_check_constant():
    ps = _store(1)
    err, recs = nx.grad_check(lambda p: nx.Tensor(np.array(3.0)), ps, n_coords=5)
    assert all(ana == 0.0 for _, _, ana, _ in recs)
    assert err == 0.0


def test_grad_check_rejects_non_finite():
    ps = _store(1)
    with pytest.raises(nx.NonFiniteError):
        nx.grad_check(lambda p: nx.Tensor(np.array(math.nan)), ps)
