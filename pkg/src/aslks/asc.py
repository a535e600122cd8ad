"""Adaptive shape convolution (grouped, modulated deformable sampling).

Each group ``g`` of input channels is read at the regular kernel grid plus
a learned per-position offset, interpolated bilinearly, scaled by a
per-position modulation value in [0, 1] and weighted by a static kernel:

    y_g(p0) = sum_k w[g, k] * m[g, k](p0) * x_g(p0*stride - pad + p_k + dp[g, k](p0))

Group outputs are concatenated along channels. Offsets and modulation come
from a 3x3 grouped generator convolution over the same input.

Channel layout of the fields: offsets have ``2*G*K`` channels ordered
group, kernel point, then (dy, dx); modulation has ``G*K`` channels ordered
group, kernel point. Kernel points run row-major over the ``kh x kw`` grid.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import ShapeError, SpecError
from .tensor import (
    BatchNorm,
    ConvParams,
    ConvSpec,
    as_tensor4,
    bilinear_gather_batched,
    bilinear_scatter_batched,
    conv2d_direct,
    logistic,
    silu,
)

GENERATOR_KERNEL = 3


@dataclass(frozen=True)
class AscSpec:
    c_in: int
    c_out: int
    kh: int = 3
    kw: int = 3
    groups: int = 1
    stride: int = 1
    pad_h: int = 1
    pad_w: int = 1

    def __post_init__(self):
        if self.groups < 1 or self.c_in % self.groups or self.c_out % self.groups:
            raise SpecError(f"groups={self.groups} must divide c_in={self.c_in} and c_out={self.c_out}")
        if self.kh < 1 or self.kw < 1:
            raise SpecError("kernel must have at least one sampling point")
        # the 3x3 generator must land on the same output grid
        for k, p in ((self.kh, self.pad_h), (self.kw, self.pad_w)):
            if (GENERATOR_KERNEL - k) % 2 or p + (GENERATOR_KERNEL - k) // 2 < 0:
                raise SpecError(f"kernel {k} with pad {p} cannot be aligned with a 3x3 offset generator")

    @property
    def points(self) -> int:
        return self.kh * self.kw

    def base_conv_spec(self) -> ConvSpec:
        return ConvSpec(self.c_in, self.c_out, self.kh, self.kw, self.stride, self.pad_h, self.pad_w, self.groups)

    def generator_spec(self) -> ConvSpec:
        g, k = self.groups, self.points
        return ConvSpec(
            self.c_in, 3 * g * k, GENERATOR_KERNEL, GENERATOR_KERNEL, self.stride,
            self.pad_h + (GENERATOR_KERNEL - self.kh) // 2,
            self.pad_w + (GENERATOR_KERNEL - self.kw) // 2,
            groups=g, has_bias=True,
        )

    def output_hw(self, h: int, w: int) -> tuple:
        return self.base_conv_spec().output_hw(h, w)


@dataclass
class AscParams:
    spec: AscSpec
    base_weights: np.ndarray
    generator: ConvParams
    bn: BatchNorm

    def __post_init__(self):
        self.base_weights = np.asarray(self.base_weights)
        want = self.spec.base_conv_spec().weight_shape
        if self.base_weights.shape != want:
            raise ShapeError(f"base_weights: shape {self.base_weights.shape}, expected {want}")
        if self.generator.spec != self.spec.generator_spec():
            raise ShapeError(f"generator: spec {self.generator.spec}, expected {self.spec.generator_spec()}")
        if self.bn.channels != self.spec.c_out:
            raise ShapeError(f"bn: {self.bn.channels} channels, expected {self.spec.c_out}")

    @classmethod
    def random(cls, spec: AscSpec, rng, dtype=np.float64, offset_scale: float = 0.3) -> "AscParams":
        base = rng.uniform(spec.base_conv_spec().weight_shape, -1.0, 1.0, dtype=dtype)
        gen = ConvParams.random(spec.generator_spec(), rng, scale=offset_scale, dtype=dtype)
        return cls(spec, base, gen, BatchNorm.random(spec.c_out, rng, dtype))

    @classmethod
    def passthrough(cls, spec: AscSpec, base_weights, dtype=np.float64, logit: float = 40.0) -> "AscParams":
        """Zero offsets, modulation saturated to 1.0 and identity batch norm."""
        gs = spec.generator_spec()
        bias = np.zeros(gs.c_out, dtype)
        bias[2 * spec.groups * spec.points:] = logit
        gen = ConvParams(gs, np.zeros(gs.weight_shape, dtype), bias)
        return cls(spec, np.asarray(base_weights, dtype), gen, BatchNorm.identity(spec.c_out, dtype))

    def base_conv(self) -> ConvParams:
        return ConvParams(self.spec.base_conv_spec(), self.base_weights)

    def param_count(self) -> int:
        return self.base_weights.size + self.generator.spec.param_count() + self.bn.param_count()


@dataclass
class AscFields:
    offsets: np.ndarray
    modulation: np.ndarray

    def __post_init__(self):
        self.offsets = as_tensor4(self.offsets, "offsets")
        self.modulation = as_tensor4(self.modulation, "modulation")
        if not np.all(np.isfinite(self.offsets)):
            raise ValueError("offsets must be finite")
        if np.any(self.modulation < 0) or np.any(self.modulation > 1):
            raise ValueError("modulation must lie in [0, 1]")

    @classmethod
    def constant(cls, spec: AscSpec, n: int, oh: int, ow: int, offset=(0.0, 0.0), modulation=1.0,
                 dtype=np.float64) -> "AscFields":
        gk = spec.groups * spec.points
        off = np.empty((n, gk, 2, oh, ow), dtype)
        off[:, :, 0] = offset[0]
        off[:, :, 1] = offset[1]
        return cls(off.reshape(n, 2 * gk, oh, ow), np.full((n, gk, oh, ow), modulation, dtype))


def asc_generate_fields(x, p: AscParams) -> AscFields:
    """Run the grouped 3x3 generator: raw offsets plus logistic modulation."""
    x = as_tensor4(x)
    if x.shape[1] != p.spec.c_in:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, ASC expects {p.spec.c_in}")
    raw = conv2d_direct(x, p.generator)
    n_off = 2 * p.spec.groups * p.spec.points
    return AscFields(raw[:, :n_off], logistic(raw[:, n_off:]))


def _sample_positions(spec: AscSpec, fields: AscFields, n: int, oh: int, ow: int, dtype):
    """Absolute sampling coordinates, each shaped (N, G, K, OH, OW)."""
    g, k = spec.groups, spec.points
    off = fields.offsets.reshape(n, g, k, 2, oh, ow).astype(dtype, copy=False)
    ky, kx = np.divmod(np.arange(k), spec.kw)
    base_y = (np.arange(oh) * spec.stride - spec.pad_h)[None, :, None] + ky[:, None, None]
    base_x = (np.arange(ow) * spec.stride - spec.pad_w)[None, None, :] + kx[:, None, None]
    py = base_y.astype(dtype) + off[:, :, :, 0]
    px = base_x.astype(dtype) + off[:, :, :, 1]
    return py, px


def _check_fields(x: np.ndarray, spec: AscSpec, fields: AscFields) -> tuple:
    if x.shape[1] != spec.c_in:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, ASC expects {spec.c_in}")
    n = x.shape[0]
    oh, ow = spec.output_hw(x.shape[2], x.shape[3])
    gk = spec.groups * spec.points
    for name, arr, c in (("offsets", fields.offsets, 2 * gk), ("modulation", fields.modulation, gk)):
        if arr.shape != (n, c, oh, ow):
            raise ShapeError(f"{name}: shape {arr.shape}, expected {(n, c, oh, ow)}")
    return n, oh, ow


def _gather_samples(x, spec, py, px, with_grad=False):
    """Bilinear samples shaped (N, G, cig, K, OH, OW)."""
    n, g = py.shape[:2]
    cig = spec.c_in // g
    planes = x.reshape(n * g, cig, x.shape[2], x.shape[3])
    res = bilinear_gather_batched(planes, py.reshape((n * g,) + py.shape[2:]),
                                  px.reshape((n * g,) + px.shape[2:]), with_grad)
    shape = (n, g, cig) + py.shape[2:]
    if with_grad:
        return tuple(r.reshape(shape) for r in res)
    return res.reshape(shape)


def asc_forward(x, p: AscParams, fields: AscFields) -> np.ndarray:
    """Grouped modulated deformable convolution with explicit fields.

    Accumulation per output element follows the same order as
    :func:`conv2d_direct` (input channel, kernel row, kernel column), so
    zero offsets and unit modulation reproduce it bit for bit.
    """
    x = as_tensor4(x)
    s = p.spec
    n, oh, ow = _check_fields(x, s, fields)
    g, k, cig, cog = s.groups, s.points, s.c_in // s.groups, s.c_out // s.groups
    py, px = _sample_positions(s, fields, n, oh, ow, x.dtype)
    mod = fields.modulation.reshape(n, g, 1, k, oh, ow).astype(x.dtype, copy=False)
    cols = _gather_samples(x, s, py, px) * mod
    w = p.base_weights.astype(x.dtype, copy=False).reshape(g, cog, cig, k)
    acc = np.zeros((n, g, cog, oh, ow), dtype=x.dtype)
    for ci in range(cig):
        for kk in range(k):
            acc += w[None, :, :, ci, kk, None, None] * cols[:, :, None, ci, kk]
    return acc.reshape(n, s.c_out, oh, ow)


def asc_backward(x, p: AscParams, fields: AscFields, grad_out) -> tuple:
    """Gradients of :func:`asc_forward`.

    Returns ``(grad_x, grad_base_weights, grad_offsets, grad_modulation)``.
    ``grad_modulation`` is taken with respect to the modulation values
    themselves (after the logistic). At integer sampling coordinates the
    offset gradient is the one-sided difference towards +1.
    """
    x = as_tensor4(x)
    s = p.spec
    n, oh, ow = _check_fields(x, s, fields)
    grad_out = np.asarray(grad_out, dtype=x.dtype)
    if grad_out.shape != (n, s.c_out, oh, ow):
        raise ShapeError(f"grad_out: shape {grad_out.shape}, expected {(n, s.c_out, oh, ow)}")
    g, k, cig, cog = s.groups, s.points, s.c_in // s.groups, s.c_out // s.groups
    h, w_ = x.shape[2], x.shape[3]
    py, px = _sample_positions(s, fields, n, oh, ow, x.dtype)
    mod = fields.modulation.reshape(n, g, 1, k, oh, ow).astype(x.dtype, copy=False)
    samples, d_py, d_px = _gather_samples(x, s, py, px, with_grad=True)
    cols = samples * mod
    w = p.base_weights.astype(x.dtype, copy=False).reshape(g, cog, cig, k)
    go = grad_out.reshape(n, g, cog, oh, ow)

    grad_w = np.einsum("ngoyx,ngckyx->gock", go, cols)
    grad_cols = np.einsum("gock,ngoyx->ngckyx", w, go)
    grad_mod = (grad_cols * samples).sum(axis=2)
    grad_samples = grad_cols * mod
    grad_dy = (grad_samples * d_py).sum(axis=2)
    grad_dx = (grad_samples * d_px).sum(axis=2)

    flat = (n * g,)
    grad_x = bilinear_scatter_batched(grad_samples.reshape(flat + grad_samples.shape[2:]),
                                      py.reshape(flat + py.shape[2:]), px.reshape(flat + px.shape[2:]), (h, w_))
    grad_off = np.stack([grad_dy, grad_dx], axis=3).reshape(n, 2 * g * k, oh, ow)
    return (
        grad_x.reshape(x.shape),
        grad_w.reshape(p.base_weights.shape),
        grad_off,
        grad_mod.reshape(n, g * k, oh, ow),
    )


def asc_block_forward(x, p: AscParams) -> np.ndarray:
    """Generator, ASC, inference batch norm, SiLU."""
    fields = asc_generate_fields(x, p)
    return silu(p.bn(asc_forward(x, p, fields)))


_HEADER_FIELDS = ("c_in", "c_out", "kh", "kw", "groups", "stride", "pad_h", "pad_w")


def asc_params_to_bundle(p: AscParams) -> dict:
    s = p.spec
    return {
        "header": np.array([getattr(s, f) for f in _HEADER_FIELDS], dtype=np.float64),
        "base_weights": p.base_weights,
        "generator_weights": p.generator.weights,
        "generator_bias": p.generator.bias,
        "bn_scale": p.bn.scale,
        "bn_shift": p.bn.shift,
        "bn_mean": p.bn.mean,
        "bn_var": p.bn.var,
    }


def asc_params_from_bundle(named: dict) -> AscParams:
    hdr = named["header"].ravel().astype(int)
    spec = AscSpec(**dict(zip(_HEADER_FIELDS, (int(v) for v in hdr))))
    gs = spec.generator_spec()
    gen = ConvParams(gs, named["generator_weights"].reshape(gs.weight_shape), named["generator_bias"].ravel())
    bn = BatchNorm(*(named[f"bn_{f}"].ravel() for f in ("scale", "shift", "mean", "var")))
    return AscParams(spec, named["base_weights"].reshape(spec.base_conv_spec().weight_shape), gen, bn)


def save_asc_params(path, p: AscParams) -> None:
    tensorio.save_bundle(path, asc_params_to_bundle(p))


def load_asc_params(path) -> AscParams:
    return asc_params_from_bundle(tensorio.load_bundle(path))
