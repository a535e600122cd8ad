import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aslks import tensorio
from aslks.errors import NumericError, ShapeError, SpecError
from aslks.oracles import bilinear_tent, conv2d_loops
from aslks.rng import SplitMix64
from aslks.tensor import (
    BatchNorm,
    ConvParams,
    ConvSpec,
    bilinear_gather,
    bilinear_gather_batched,
    bilinear_sample,
    bilinear_sample_grad,
    bilinear_scatter,
    bilinear_scatter_batched,
    conv2d_backward,
    conv2d_direct,
    finite_diff_grad,
    grad_check,
    shift2d,
)

from conftest import assert_close


def test_all_ones_sum_is_nine():
    p = ConvParams(ConvSpec(1, 1, 3, 3), np.ones((1, 1, 3, 3)))
    out = conv2d_direct(np.ones((1, 1, 3, 3)), p)
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 9.0


def test_delta_kernel_is_identity(rng):
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    x = rng.uniform((1, 1, 5, 4), -1, 1)
    assert np.array_equal(conv2d_direct(x, ConvParams(ConvSpec(1, 1, 3, 3, 1, 1, 1), w)), x)


def test_random_conv_matches_loops(rng):
    p = ConvParams.random(ConvSpec(2, 3, 3, 3, 1, 1, 1, has_bias=True), rng)
    x = rng.uniform((1, 2, 5, 5), -1, 1)
    assert np.array_equal(conv2d_direct(x, p), conv2d_loops(x, p.weights, p.bias, 1, 1, 1))


@settings(max_examples=40, deadline=None)
@given(
    seed=st.integers(0, 2**32),
    h=st.integers(1, 8), w=st.integers(1, 8),
    k=st.sampled_from([1, 2, 3]), stride=st.integers(1, 2), pad=st.integers(0, 2),
    groups=st.sampled_from([1, 2]), bias=st.booleans(),
)
def test_conv_equals_loops_exactly(seed, h, w, k, stride, pad, groups, bias):
    if h + 2 * pad < k or w + 2 * pad < k:
        return
    r = SplitMix64(seed)
    p = ConvParams.random(ConvSpec(2, 4, k, k, stride, pad, pad, groups, bias), r)
    x = r.uniform((2, 2, h, w), -1, 1)
    assert np.array_equal(conv2d_direct(x, p), conv2d_loops(x, p.weights, p.bias, stride, pad, pad, groups))


def test_grouped_conv_is_concat_of_slices(rng):
    g = 3
    p = ConvParams.random(ConvSpec(6, 9, 3, 3, 1, 1, 1, groups=g), rng)
    x = rng.uniform((2, 6, 7, 5), -1, 1)
    parts = []
    for i in range(g):
        sub = ConvParams(ConvSpec(2, 3, 3, 3, 1, 1, 1), p.weights[3 * i:3 * i + 3])
        parts.append(conv2d_direct(x[:, 2 * i:2 * i + 2], sub))
    assert np.array_equal(conv2d_direct(x, p), np.concatenate(parts, axis=1))


def test_conv_shape_errors_name_axis():
    p = ConvParams(ConvSpec(2, 1, 3, 3), np.zeros((1, 2, 3, 3)))
    with pytest.raises(ShapeError, match="channel"):
        conv2d_direct(np.zeros((1, 3, 5, 5)), p)
    with pytest.raises(ShapeError, match="height"):
        conv2d_direct(np.zeros((1, 2, 2, 5)), p)
    with pytest.raises(SpecError):
        ConvSpec(3, 4, 3, 3, groups=2)


def test_f32_is_preserved(rng):
    p = ConvParams.random(ConvSpec(2, 2, 3, 3, 1, 1, 1), rng, dtype=np.float32)
    x = rng.uniform((1, 2, 4, 4), -1, 1, dtype=np.float32)
    assert conv2d_direct(x, p).dtype == np.float32


def test_determinism_across_thread_counts(rng, monkeypatch):
    p = ConvParams.random(ConvSpec(3, 4, 3, 3, 1, 1, 1, has_bias=True), rng, dtype=np.float32)
    x = rng.uniform((5, 3, 9, 9), -1, 1, dtype=np.float32)
    outs = []
    for t in ("1", "3", "4"):
        monkeypatch.setenv("ASLKS_THREADS", t)
        outs.append(conv2d_direct(x, p).tobytes())
    assert outs[0] == outs[1] == outs[2]


# --- backward ----------------------------------------------------------------


def test_backward_zero_grad(rng):
    p = ConvParams.random(ConvSpec(2, 3, 3, 3, 1, 1, 1, has_bias=True), rng)
    x = rng.uniform((1, 2, 4, 4), -1, 1)
    gx, gw, gb = conv2d_backward(x, p, np.zeros((1, 3, 4, 4)))
    assert not gx.any() and not gw.any() and not gb.any()


def test_backward_pointwise_hand_accumulation():
    x = np.array([[1.0, 2.0], [3.0, 4.0], [-1.0, 0.5], [2.0, -2.0]]).reshape(1, 2, 2, 2)
    go = np.array([[1.0, 0.0], [2.0, -1.0]]).reshape(1, 1, 2, 2)
    p = ConvParams(ConvSpec(2, 1, 1, 1), np.array([0.3, -0.7]).reshape(1, 2, 1, 1))
    _, gw, _ = conv2d_backward(x, p, go)
    # channel 0: 1*1 + 2*0 + 3*2 + 4*-1 = 3 ; channel 1: -1*1 + .5*0 + 2*2 + -2*-1 = 5
    assert gw.ravel().tolist() == [3.0, 5.0]


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("stride,groups", [(1, 1), (2, 2)])
def test_conv_gradients_pass_check(seed, stride, groups):
    r = SplitMix64(seed)
    spec = ConvSpec(2, 4, 3, 3, stride, 1, 1, groups, True)
    p = ConvParams.random(spec, r)
    x = r.uniform((1, 2, 4, 4), -1, 1)
    oh, ow = spec.output_hw(4, 4)
    go = r.uniform((1, 4, oh, ow), -1, 1)
    nx, nw = x.size, p.weights.size

    def split(t):
        return t[:nx].reshape(x.shape), ConvParams(spec, t[nx:nx + nw].reshape(spec.weight_shape), t[nx + nw:])

    def f(t):
        return float(np.sum(conv2d_direct(*split(t)) * go))

    def g(t):
        gx, gw, gb = conv2d_backward(*split(t), go)
        return np.concatenate([gx.ravel(), gw.ravel(), gb])

    theta = np.concatenate([x.ravel(), p.weights.ravel(), p.bias])
    rep = grad_check("conv2d", f, g, theta, tol=1e-5, step=1e-6)
    assert rep.passed, rep


def test_fd_of_sum_matches_backward_with_ones(rng):
    spec = ConvSpec(2, 2, 3, 3, 1, 1, 1)
    p = ConvParams.random(spec, rng)
    x = rng.uniform((1, 2, 3, 3), -1, 1)
    fd = finite_diff_grad(lambda t: conv2d_direct(t.reshape(x.shape), p).sum(), x.ravel())
    gx, _, _ = conv2d_backward(x, p, np.ones((1, 2, 3, 3)))
    assert_close(fd, gx.ravel(), 1e-8)


# --- shift -------------------------------------------------------------------


def test_shift_identity_and_example(rng):
    x = rng.uniform((1, 2, 3, 3), -1, 1)
    assert np.array_equal(shift2d(x, 0, 0), x)
    m = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    assert shift2d(m, 1, 0)[0, 0].tolist() == [[0, 0], [1, 2]]
    assert not shift2d(m, 2, 0).any() and not shift2d(m, 0, -5).any()


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32), dy=st.integers(-7, 7), dx=st.integers(-7, 7))
def test_shift_is_permutation_with_zero_fill(seed, dy, dx):
    x = SplitMix64(seed).uniform((1, 2, 5, 6), 1, 2)  # strictly nonzero
    y = shift2d(x, dy, dx)
    moved = y[y != 0]
    # every surviving value appears in x, nothing is scaled or combined
    assert np.all(np.isin(moved, x))
    assert moved.size == max(0, 5 - abs(dy)) * max(0, 6 - abs(dx)) * 2
    back = shift2d(y, -dy, -dx)
    kept = shift2d(shift2d(np.ones_like(x), dy, dx), -dy, -dx) == 1
    assert np.array_equal(back[kept], x[kept])


# --- bilinear ----------------------------------------------------------------


def test_bilinear_examples():
    img = np.array([[0.0, 2.0], [4.0, 6.0]]).reshape(1, 1, 2, 2)
    assert bilinear_sample(img, 0, 0, 1, 0) == 4.0
    assert bilinear_sample(img, 0, 0, 0.5, 0.5) == 3.0
    ramp = (np.arange(4)[:, None] + 2 * np.arange(5)[None, :] + 1.0).reshape(1, 1, 4, 5)
    for j in range(5):
        assert bilinear_sample(ramp, 0, 0, -0.5, j) == 0.5 * ramp[0, 0, 0, j]


def test_bilinear_lattice_gradient_is_right_continuous():
    img = np.array([[0.0, 2.0, 3.0], [4.0, 6.0, 9.0]]).reshape(1, 1, 2, 3)
    _, gy, gx = bilinear_sample_grad(img, 0, 0, 0.0, 1.0)
    assert (gy, gx) == (6.0 - 2.0, 3.0 - 2.0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32), py=st.floats(-2, 6), px=st.floats(-2, 7))
def test_bilinear_matches_tent_formula(seed, py, px):
    plane = SplitMix64(seed).uniform((5, 6), -1, 1)
    assert abs(float(bilinear_gather(plane, np.float64(py), np.float64(px))) - bilinear_tent(plane, py, px)) <= 1e-14


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32), i=st.integers(0, 3), j=st.integers(0, 4), t=st.floats(0, 1))
def test_bilinear_exact_on_lattice_and_linear_between(seed, i, j, t):
    x = SplitMix64(seed).uniform((1, 1, 5, 6), -1, 1)
    assert bilinear_sample(x, 0, 0, i, j) == x[0, 0, i, j]
    along_y = bilinear_sample(x, 0, 0, i + t, j)
    assert abs(along_y - ((1 - t) * x[0, 0, i, j] + t * x[0, 0, i + 1, j])) <= 1e-14
    along_x = bilinear_sample(x, 0, 0, i, j + t)
    assert abs(along_x - ((1 - t) * x[0, 0, i, j] + t * x[0, 0, i, j + 1])) <= 1e-14


@pytest.mark.parametrize("seed", range(5))
def test_bilinear_position_gradient(seed):
    r = SplitMix64(seed)
    plane = r.uniform((4, 5), -1, 1)
    pos = r.uniform(20, -0.8, 4.8)
    pos = np.floor(pos) + np.clip(pos - np.floor(pos), 2e-3, 1 - 2e-3)

    def f(t):
        return float(np.sum(bilinear_gather(plane, t[:10], t[10:])))

    def g(t):
        _, gy, gx = bilinear_gather(plane, t[:10], t[10:], with_grad=True)
        return np.concatenate([gy, gx])

    assert grad_check("bilinear", f, g, pos, tol=1e-4, step=1e-6).passed


def test_scatter_is_adjoint_of_gather(rng):
    planes = rng.uniform((3, 4, 5), -1, 1)
    py, px = rng.uniform((2, 7), -1.5, 4.5), rng.uniform((2, 7), -1.5, 5.5)
    g = rng.uniform((3, 2, 7), -1, 1)
    lhs = np.sum(bilinear_gather(planes, py, px) * g)
    rhs = np.sum(planes * bilinear_scatter(g, py, px, (4, 5)))
    assert abs(lhs - rhs) < 1e-12
    # batched variant agrees item by item
    bp = rng.uniform((2, 3, 4, 5), -1, 1)
    got = bilinear_gather_batched(bp, py, px)
    for b in range(2):
        assert np.array_equal(got[b], bilinear_gather(bp[b], py[b], px[b]))
    gb = rng.uniform((2, 3, 7), -1, 1)
    sc = bilinear_scatter_batched(gb, py, px, (4, 5))
    for b in range(2):
        assert_close(sc[b], bilinear_scatter(gb[b], py[b], px[b], (4, 5)), 1e-15)


# --- finite differences and grad_check ----------------------------------------


def test_finite_diff_examples():
    a = np.array([1.5, -2.0, 0.25])
    assert_close(finite_diff_grad(lambda t: float(a @ t), np.zeros(3)), a, 1e-9)
    assert abs(finite_diff_grad(lambda t: float(t[0] ** 2), [3.0], 1e-6)[0] - 6.0) <= 1e-6
    with pytest.raises(NumericError):
        finite_diff_grad(lambda t: float("nan"), [1.0])


def test_grad_check_report_fields():
    rep = grad_check("same", lambda t: float(t @ t), lambda t: 2 * t, np.array([1.0, 2.0]), tol=1e-6)
    assert rep.passed and rep.max_rel_err < 1e-8
    rep = grad_check("off", lambda t: float(t[0]), lambda t: np.array([2.0]), np.array([0.3]), tol=1e-4)
    assert not rep.passed and abs(rep.max_rel_err - 1 / 3) < 1e-6
    with pytest.raises(NumericError, match="coordinate 1"):
        grad_check("nan", lambda t: 0.0, lambda t: np.array([0.0, np.inf]), np.zeros(2))


def test_grad_check_half_error_example():
    # analytic = fd + 1 on a coordinate of magnitude 1: |1| / (|1| + |2|) ... formula gives 1/3;
    # the 0.5 figure arises for fd = 0.5, analytic = 1.5
    rep = grad_check("x", lambda t: 0.5 * float(t[0]), lambda t: np.array([1.5]), np.array([1.0]), tol=1e-4)
    assert abs(rep.max_rel_err - 0.5) < 1e-6 and not rep.passed


# --- batch norm / serialization ------------------------------------------------


def test_batchnorm_identity_is_exact(rng):
    x = rng.uniform((2, 3, 4, 4), -5, 5)
    assert np.array_equal(BatchNorm.identity(3)(x), x)
    with pytest.raises(SpecError):
        BatchNorm(np.ones(2), np.zeros(2), np.zeros(2), np.array([1.0, 0.0]))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_t4_roundtrip(tmp_path, rng, dtype):
    x = rng.uniform((2, 3, 4, 5), -1, 1, dtype=dtype)
    path = tmp_path / "x.t4"
    tensorio.save_tensor(path, x)
    raw = path.read_bytes()
    assert raw[:2] == b"T4" and raw[2] == (0 if dtype == np.float32 else 1)
    assert len(raw) == 19 + x.nbytes
    y = tensorio.load_tensor(path)
    assert y.dtype == dtype and np.array_equal(x, y)
    tensorio.save_bundle(tmp_path / "b.t4b", {"a": x, "vec": np.arange(3.0)})
    back = tensorio.load_bundle(tmp_path / "b.t4b")
    assert np.array_equal(back["a"], x) and back["vec"].shape == (1, 1, 1, 3)
