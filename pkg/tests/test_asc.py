import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from aslks.asc import (
    AscFields,
    AscParams,
    AscSpec,
    asc_backward,
    asc_block_forward,
    asc_forward,
    asc_generate_fields,
    load_asc_params,
    save_asc_params,
)
from aslks.errors import ShapeError, SpecError
from aslks.oracles import asc_loops
from aslks.rng import SplitMix64
from aslks.tensor import BatchNorm, ConvParams, conv2d_direct, silu
from aslks.verify import asc_grad_check

from conftest import assert_close


def zero_generator(spec, dtype=np.float64, bias=0.0):
    gs = spec.generator_spec()
    return ConvParams(gs, np.zeros(gs.weight_shape, dtype), np.full(gs.c_out, bias, dtype))


def test_generator_shapes_and_zero_generator(rng):
    spec = AscSpec(4, 4, 3, 3, groups=2)
    assert spec.generator_spec().c_out == 3 * 2 * 9
    p = AscParams(spec, rng.uniform((4, 2, 3, 3), -1, 1), zero_generator(spec), BatchNorm.identity(4))
    f = asc_generate_fields(rng.uniform((1, 4, 5, 6), -1, 1), p)
    assert f.offsets.shape == (1, 36, 5, 6) and f.modulation.shape == (1, 18, 5, 6)
    assert not f.offsets.any() and np.all(f.modulation == 0.5)


def test_saturated_bias_gives_unit_modulation(rng):
    spec = AscSpec(2, 2)
    gen = zero_generator(spec)
    gen.bias[2 * spec.points:] = 20.0
    f = asc_generate_fields(rng.uniform((1, 2, 4, 4), -1, 1), AscParams(spec, np.zeros((2, 2, 3, 3)), gen,
                                                                           BatchNorm.identity(2)))
    assert np.all(np.abs(f.modulation - 1.0) < 1e-8)


@pytest.mark.parametrize("groups", [1, 2, 4])
@pytest.mark.parametrize("k", [1, 3])
@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_zero_offsets_unit_modulation_is_plain_conv(groups, k, dtype):
    r = SplitMix64(10 * groups + k)
    spec = AscSpec(8, 8, k, k, groups=groups, pad_h=k // 2, pad_w=k // 2)
    p = AscParams.random(spec, r, dtype=dtype)
    x = r.uniform((2, 8, 6, 7), -1, 1, dtype=dtype)
    fields = AscFields.constant(spec, 2, 6, 7, dtype=dtype)
    assert np.array_equal(asc_forward(x, p, fields), conv2d_direct(x, p.base_conv()))


def test_ramp_with_fractional_offset():
    h, w = 5, 6
    ramp = (np.arange(h)[:, None] + 2.0 * np.arange(w)[None, :]).reshape(1, 1, h, w)
    spec = AscSpec(1, 1, 1, 1, pad_h=0, pad_w=0)
    p = AscParams(spec, np.ones((1, 1, 1, 1)), zero_generator(spec), BatchNorm.identity(1))
    out = asc_forward(ramp, p, AscFields.constant(spec, 1, h, w, offset=(0.5, 0.25)))
    interior = out[0, 0, :h - 1, :w - 1]
    assert_close(interior, ramp[0, 0, :h - 1, :w - 1] + 0.5 + 0.5, 1e-14)


def test_modulation_scales_output(rng):
    spec = AscSpec(2, 3)
    p = AscParams.random(spec, rng)
    x = rng.uniform((1, 2, 5, 5), -1, 1)
    f = AscFields(rng.uniform((1, 18, 5, 5), -0.7, 0.7), np.zeros((1, 9, 5, 5)))
    assert not asc_forward(x, p, f).any()
    m = rng.uniform((1, 9, 5, 5), 0, 1)
    full = asc_forward(x, p, AscFields(f.offsets, m))
    half = asc_forward(x, p, AscFields(f.offsets, 0.5 * m))
    assert_close(half, 0.5 * full, 1e-14)


@settings(max_examples=12, deadline=None)
@given(seed=st.integers(0, 2**32), groups=st.sampled_from([1, 2]), k=st.sampled_from([1, 3]),
       stride=st.integers(1, 2), h=st.integers(2, 6), w=st.integers(2, 6))
def test_matches_point_by_point_oracle(seed, groups, k, stride, h, w):
    r = SplitMix64(seed)
    spec = AscSpec(2, 4, k, k, groups=groups, stride=stride, pad_h=k // 2, pad_w=k // 2)
    p = AscParams.random(spec, r)
    x = r.uniform((1, 2, h, w), -1, 1)
    oh, ow = spec.output_hw(h, w)
    gk = groups * k * k
    f = AscFields(r.uniform((1, 2 * gk, oh, ow), -2.5, 2.5), r.uniform((1, gk, oh, ow), 0, 1))
    want = asc_loops(x, p.base_weights, f.offsets, f.modulation, k, k, groups, stride, k // 2, k // 2)
    assert_close(asc_forward(x, p, f), want, 1e-12)


def test_far_offsets_read_zero(rng):
    spec = AscSpec(2, 2)
    p = AscParams.random(spec, rng)
    x = rng.uniform((1, 2, 4, 4), -1, 1)
    f = AscFields.constant(spec, 1, 4, 4, offset=(50.0, -50.0))
    assert not asc_forward(x, p, f).any()


def test_block_examples():
    spec = AscSpec(1, 1, 1, 1, pad_h=0, pad_w=0)
    p = AscParams(spec, np.ones((1, 1, 1, 1)), zero_generator(spec), BatchNorm.identity(1))
    assert not asc_block_forward(np.zeros((1, 1, 3, 3)), p).any()
    bn = BatchNorm(np.ones(1), np.zeros(1), np.zeros(1), np.ones(1))
    p = AscParams(spec, np.ones((1, 1, 1, 1)), zero_generator(spec), bn)
    out = asc_block_forward(np.full((1, 1, 3, 3), 100.0), p)
    expect = float(silu(np.array(50.0 / np.sqrt(1 + 1e-5))))
    assert_close(out, expect, 1e-10)
    assert abs(out[0, 0, 0, 0] - 50.0) / 50.0 < 1e-5


def test_passthrough_block_is_silu_of_conv(rng):
    spec = AscSpec(4, 4, 3, 3, groups=2)
    p = AscParams.passthrough(spec, rng.uniform((4, 2, 3, 3), -1, 1))
    x = rng.uniform((2, 4, 5, 5), -1, 1)
    assert np.array_equal(asc_block_forward(x, p), silu(conv2d_direct(x, p.base_conv())))


def test_spec_and_field_validation(rng):
    with pytest.raises(SpecError):
        AscSpec(3, 4, groups=2)
    with pytest.raises(SpecError):
        AscSpec(2, 2, 2, 2)
    spec = AscSpec(2, 2)
    p = AscParams.random(spec, rng)
    with pytest.raises(ShapeError, match="offsets"):
        asc_forward(np.zeros((1, 2, 4, 4)), p, AscFields.constant(spec, 1, 3, 4))
    with pytest.raises(ValueError):
        AscFields(np.zeros((1, 18, 2, 2)), np.full((1, 9, 2, 2), 1.5))
    with pytest.raises(ValueError):
        AscFields(np.full((1, 18, 2, 2), np.nan), np.zeros((1, 9, 2, 2)))


@pytest.mark.parametrize("seed", range(5))
def test_gradients_all_groups(seed):
    reports = asc_grad_check(seed)
    assert set(reports) == {"x", "base_weights", "offsets", "modulation"}
    for rep in reports.values():
        assert rep.passed, rep


def test_backward_adjoint_identity(rng):
    # <grad_out, forward(x)> is linear in x, so <grad_x, x> equals it
    spec = AscSpec(2, 2, groups=2)
    p = AscParams.random(spec, rng)
    x = rng.uniform((1, 2, 5, 5), -1, 1)
    f = AscFields(rng.uniform((1, 36, 5, 5), -1.3, 1.3), rng.uniform((1, 18, 5, 5), 0, 1))
    go = rng.uniform((1, 2, 5, 5), -1, 1)
    gx, gw, _, gm = asc_backward(x, p, f, go)
    y = asc_forward(x, p, f)
    total = np.sum(go * y)
    assert abs(np.sum(gx * x) - total) < 1e-12
    assert abs(np.sum(gw * p.base_weights) - total) < 1e-12
    assert abs(np.sum(gm * f.modulation) - total) < 1e-12


def test_params_roundtrip(tmp_path, rng):
    spec = AscSpec(4, 6, 3, 3, groups=2, stride=2)
    p = AscParams.random(spec, rng)
    save_asc_params(tmp_path / "asc.t4b", p)
    q = load_asc_params(tmp_path / "asc.t4b")
    assert q.spec == spec
    x = rng.uniform((1, 4, 7, 7), -1, 1)
    assert np.array_equal(asc_block_forward(x, p), asc_block_forward(x, q))
