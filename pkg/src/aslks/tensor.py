"""Dense NCHW reference operators.

Everything in this module is the oracle substrate for the rest of the
package: direct grouped convolution with analytic gradients, zero-fill
spatial shifts, zero-padded bilinear sampling, and finite-difference
gradient checking.

Tensors are plain ``numpy.ndarray`` objects of rank 4 in NCHW order.
Padding is always zero padding and dilation is always 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ._parallel import map_batch
from .errors import NumericError, ShapeError, SpecError

BN_EPS = 1e-5
DEFAULT_DTYPE = np.float32

_AXES = ("batch", "channel", "height", "width")


def as_tensor4(x, name: str = "x") -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise ShapeError(f"{name}: expected a 4-D NCHW tensor, got {x.ndim}-D shape {x.shape}")
    if min(x.shape) < 1:
        raise ShapeError(f"{name}: every axis must be >= 1, got {x.shape}")
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(DEFAULT_DTYPE)
    return x


def check_same_shape(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape == b.shape:
        return
    if a.ndim == b.ndim == 4:
        for axis, (u, v) in enumerate(zip(a.shape, b.shape)):
            if u != v:
                raise ShapeError(f"{what}: {_AXES[axis]} axis is {v}, expected {u}")
    raise ShapeError(f"{what}: shape {b.shape}, expected {a.shape}")


@dataclass(frozen=True)
class ConvSpec:
    c_in: int
    c_out: int
    kh: int
    kw: int
    stride: int = 1
    pad_h: int = 0
    pad_w: int = 0
    groups: int = 1
    has_bias: bool = False

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.kh, self.kw, self.stride, self.groups) < 1:
            raise SpecError(f"conv dims, stride and groups must be positive: {self}")
        if self.pad_h < 0 or self.pad_w < 0:
            raise SpecError(f"padding must be nonnegative: {self}")
        if self.c_in % self.groups or self.c_out % self.groups:
            raise SpecError(f"groups={self.groups} must divide c_in={self.c_in} and c_out={self.c_out}")

    @property
    def weight_shape(self) -> tuple:
        return (self.c_out, self.c_in // self.groups, self.kh, self.kw)

    def output_hw(self, h: int, w: int) -> tuple:
        oh = (h + 2 * self.pad_h - self.kh) // self.stride + 1
        ow = (w + 2 * self.pad_w - self.kw) // self.stride + 1
        if h + 2 * self.pad_h < self.kh or oh < 1:
            raise ShapeError(f"height axis: input {h} with pad {self.pad_h} is smaller than kernel {self.kh}")
        if w + 2 * self.pad_w < self.kw or ow < 1:
            raise ShapeError(f"width axis: input {w} with pad {self.pad_w} is smaller than kernel {self.kw}")
        return oh, ow

    def macs(self, n: int, h: int, w: int) -> int:
        oh, ow = self.output_hw(h, w)
        return n * self.c_out * oh * ow * (self.c_in // self.groups) * self.kh * self.kw

    def param_count(self) -> int:
        return int(np.prod(self.weight_shape)) + (self.c_out if self.has_bias else 0)


@dataclass
class ConvParams:
    spec: ConvSpec
    weights: np.ndarray
    bias: Optional[np.ndarray] = None

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if self.weights.shape != self.spec.weight_shape:
            raise ShapeError(f"weights: shape {self.weights.shape}, expected {self.spec.weight_shape}")
        if self.spec.has_bias:
            if self.bias is None:
                raise ShapeError("bias: spec has_bias but no bias given")
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (self.spec.c_out,):
                raise ShapeError(f"bias: shape {self.bias.shape}, expected ({self.spec.c_out},)")
        elif self.bias is not None:
            raise ShapeError("bias: given but spec.has_bias is False")

    def astype(self, dtype) -> "ConvParams":
        b = None if self.bias is None else self.bias.astype(dtype)
        return ConvParams(self.spec, self.weights.astype(dtype), b)

    @classmethod
    def random(cls, spec: ConvSpec, rng, scale: float = 1.0, dtype=np.float64) -> "ConvParams":
        w = rng.uniform(spec.weight_shape, -scale, scale, dtype=dtype)
        b = rng.uniform(spec.c_out, -scale, scale, dtype=dtype) if spec.has_bias else None
        return cls(spec, w, b)


def _check_conv_input(x: np.ndarray, spec: ConvSpec) -> tuple:
    if x.shape[1] != spec.c_in:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, conv expects {spec.c_in}")
    return spec.output_hw(x.shape[2], x.shape[3])


def _pad_hw(x: np.ndarray, ph: int, pw: int) -> np.ndarray:
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d_direct(x, p: ConvParams) -> np.ndarray:
    """Grouped cross-correlation with zero padding.

    Per output element the products are accumulated into a zero-initialised
    value in a fixed order: input channel of the group, then kernel row,
    then kernel column; the bias (if any) is added last. The loops are
    vectorized only across batch, group, output channel and output
    position, so the result is bit-reproducible and identical to a scalar
    nested-loop implementation with the same order.
    """
    x = as_tensor4(x)
    s = p.spec
    oh, ow = _check_conv_input(x, s)
    g, cig, cog = s.groups, s.c_in // s.groups, s.c_out // s.groups
    w = p.weights.astype(x.dtype, copy=False).reshape(g, cog, cig, s.kh, s.kw)
    st = s.stride

    def run(xb):
        nb = xb.shape[0]
        xp = _pad_hw(xb, s.pad_h, s.pad_w).reshape(nb, g, cig, xb.shape[2] + 2 * s.pad_h, -1)
        acc = np.zeros((nb, g, cog, oh, ow), dtype=x.dtype)
        for ci in range(cig):
            for ky in range(s.kh):
                for kx in range(s.kw):
                    patch = xp[:, :, ci, ky:ky + st * (oh - 1) + 1:st, kx:kx + st * (ow - 1) + 1:st]
                    acc += w[None, :, :, ci, ky, kx, None, None] * patch[:, :, None]
        out = acc.reshape(nb, s.c_out, oh, ow)
        if p.bias is not None:
            out += p.bias.astype(x.dtype, copy=False)[None, :, None, None]
        return out

    return map_batch(run, x)


def conv2d_backward(x, p: ConvParams, grad_out) -> tuple:
    """Analytic gradients of :func:`conv2d_direct`.

    Returns ``(grad_x, grad_w, grad_b)``; ``grad_b`` is ``None`` when the
    convolution has no bias.
    """
    x = as_tensor4(x)
    s = p.spec
    oh, ow = _check_conv_input(x, s)
    grad_out = np.asarray(grad_out, dtype=x.dtype)
    expected = (x.shape[0], s.c_out, oh, ow)
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out: shape {grad_out.shape}, expected {expected}")
    n = x.shape[0]
    g, cig, cog = s.groups, s.c_in // s.groups, s.c_out // s.groups
    st = s.stride
    w = p.weights.astype(x.dtype, copy=False).reshape(g, cog, cig, s.kh, s.kw)
    go = grad_out.reshape(n, g, cog, oh, ow)
    xp = _pad_hw(x, s.pad_h, s.pad_w).reshape(n, g, cig, x.shape[2] + 2 * s.pad_h, -1)
    gxp = np.zeros_like(xp)
    gw = np.zeros_like(w)
    for ci in range(cig):
        for ky in range(s.kh):
            rs = slice(ky, ky + st * (oh - 1) + 1, st)
            for kx in range(s.kw):
                cs = slice(kx, kx + st * (ow - 1) + 1, st)
                gw[:, :, ci, ky, kx] = np.einsum("ngoij,ngij->go", go, xp[:, :, ci, rs, cs])
                gxp[:, :, ci, rs, cs] += np.einsum("go,ngoij->ngij", w[:, :, ci, ky, kx], go)
    gxp = gxp.reshape(n, s.c_in, xp.shape[3], xp.shape[4])
    gx = gxp[:, :, s.pad_h:s.pad_h + x.shape[2], s.pad_w:s.pad_w + x.shape[3]]
    gb = grad_out.sum(axis=(0, 2, 3)) if p.bias is not None else None
    return np.ascontiguousarray(gx), gw.reshape(s.weight_shape), gb


def shift2d(x, dy: int, dx: int) -> np.ndarray:
    """``out[..., i, j] = x[..., i - dy, j - dx]`` with zero fill.

    Pure data movement: no arithmetic is performed on the values.
    """
    x = as_tensor4(x)
    dy, dx = int(dy), int(dx)
    h, w = x.shape[2], x.shape[3]
    out = np.zeros_like(x)
    if abs(dy) >= h or abs(dx) >= w:
        return out
    dst_r = slice(max(dy, 0), h + min(dy, 0))
    src_r = slice(max(-dy, 0), h + min(-dy, 0))
    dst_c = slice(max(dx, 0), w + min(dx, 0))
    src_c = slice(max(-dx, 0), w + min(-dx, 0))
    out[:, :, dst_r, dst_c] = x[:, :, src_r, src_c]
    return out


# --- bilinear sampling -------------------------------------------------------
#
# Corners outside the map read as 0. The corner is chosen with floor(), so at
# an integer coordinate the fractional part is 0 and the position derivative
# is the one-sided difference towards +1 (right/down-continuous branch).


def _corners(py, px):
    y0 = np.floor(py)
    x0 = np.floor(px)
    ly = py - y0
    lx = px - x0
    return y0.astype(np.int64), x0.astype(np.int64), ly, lx


def _gather(planes, yi, xi):
    h, w = planes.shape[-2:]
    valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
    vals = planes[..., np.clip(yi, 0, h - 1), np.clip(xi, 0, w - 1)]
    return np.where(valid, vals, 0).astype(planes.dtype, copy=False), valid


def bilinear_gather(planes, py, px, with_grad: bool = False):
    """Sample every leading plane of ``planes`` (..., H, W) at positions ``py, px``.

    ``py`` and ``px`` share a shape ``S``; the result has shape
    ``planes.shape[:-2] + S``. With ``with_grad`` also returns the
    derivatives of each sample with respect to ``py`` and ``px``.
    """
    planes = np.asarray(planes)
    py = np.asarray(py, dtype=planes.dtype)
    px = np.asarray(px, dtype=planes.dtype)
    y0, x0, ly, lx = _corners(py, px)
    v00, _ = _gather(planes, y0, x0)
    v01, _ = _gather(planes, y0, x0 + 1)
    v10, _ = _gather(planes, y0 + 1, x0)
    v11, _ = _gather(planes, y0 + 1, x0 + 1)
    hy, hx = 1 - ly, 1 - lx
    val = hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11
    if not with_grad:
        return val
    d_py = hx * (v10 - v00) + lx * (v11 - v01)
    d_px = hy * (v01 - v00) + ly * (v11 - v10)
    return val, d_py, d_px


def bilinear_scatter(grad_vals, py, px, hw: tuple) -> np.ndarray:
    """Adjoint of :func:`bilinear_gather` with respect to the sampled planes."""
    grad_vals = np.asarray(grad_vals)
    lead = grad_vals.shape[: grad_vals.ndim - np.ndim(py)]
    h, w = hw
    out = np.zeros(lead + (h * w,), dtype=grad_vals.dtype)
    y0, x0, ly, lx = _corners(np.asarray(py, dtype=grad_vals.dtype), np.asarray(px, dtype=grad_vals.dtype))
    hy, hx = 1 - ly, 1 - lx
    flat_out = out.reshape(-1, h * w)
    flat_g = grad_vals.reshape(flat_out.shape[0], -1)
    for yi, xi, wt in ((y0, x0, hy * hx), (y0, x0 + 1, hy * lx), (y0 + 1, x0, ly * hx), (y0 + 1, x0 + 1, ly * lx)):
        valid = ((yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)).ravel()
        idx = (yi * w + xi).ravel()[valid]
        np.add.at(flat_out, (slice(None), idx), flat_g[:, valid] * wt.ravel()[valid])
    return out.reshape(lead + (h, w))


def bilinear_gather_batched(planes, py, px, with_grad: bool = False):
    """Per-item positions: ``planes`` (B, C, H, W), ``py``/``px`` (B, *S) -> (B, C, *S).

    Same arithmetic as :func:`bilinear_gather`, one position set per batch item.
    """
    planes = np.asarray(planes)
    b, c, h, w = planes.shape
    spatial = py.shape[1:]
    flat = planes.reshape(b, c, h * w)
    y0, x0, ly, lx = _corners(np.asarray(py, planes.dtype), np.asarray(px, planes.dtype))

    def corner(yi, xi):
        valid = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        lin = (np.clip(yi, 0, h - 1) * w + np.clip(xi, 0, w - 1)).reshape(b, 1, -1)
        v = np.take_along_axis(flat, np.broadcast_to(lin, (b, c, lin.shape[2])), axis=2)
        return np.where(valid.reshape(b, 1, -1), v, 0).astype(planes.dtype, copy=False).reshape((b, c) + spatial)

    v00, v01 = corner(y0, x0), corner(y0, x0 + 1)
    v10, v11 = corner(y0 + 1, x0), corner(y0 + 1, x0 + 1)
    ly, lx = ly[:, None], lx[:, None]
    hy, hx = 1 - ly, 1 - lx
    val = hy * hx * v00 + hy * lx * v01 + ly * hx * v10 + ly * lx * v11
    if not with_grad:
        return val
    d_py = hx * (v10 - v00) + lx * (v11 - v01)
    d_px = hy * (v01 - v00) + ly * (v11 - v10)
    return val, d_py, d_px


def bilinear_scatter_batched(grad_vals, py, px, hw: tuple) -> np.ndarray:
    """Adjoint of :func:`bilinear_gather_batched`; returns (B, C, H, W)."""
    grad_vals = np.asarray(grad_vals)
    b, c = grad_vals.shape[:2]
    h, w = hw
    out = np.zeros((c, b * h * w), dtype=grad_vals.dtype)
    y0, x0, ly, lx = _corners(np.asarray(py, grad_vals.dtype), np.asarray(px, grad_vals.dtype))
    hy, hx = 1 - ly, 1 - lx
    g = np.moveaxis(grad_vals, 1, 0).reshape(c, -1)
    item = (np.arange(b) * (h * w)).reshape((b,) + (1,) * (py.ndim - 1))
    for yi, xi, wt in ((y0, x0, hy * hx), (y0, x0 + 1, hy * lx), (y0 + 1, x0, ly * hx), (y0 + 1, x0 + 1, ly * lx)):
        valid = ((yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)).ravel()
        idx = (item + yi * w + xi).ravel()[valid]
        np.add.at(out, (slice(None), idx), g[:, valid] * wt.ravel()[valid])
    return np.moveaxis(out.reshape(c, b, h, w), 0, 1)


def bilinear_sample(x, n: int, c: int, py: float, px: float) -> float:
    """Value of ``x[n, c]`` at fractional position ``(py, px)``."""
    x = as_tensor4(x)
    return float(bilinear_gather(x[n, c], np.float64(py), np.float64(px)))


def bilinear_sample_grad(x, n: int, c: int, py: float, px: float) -> tuple:
    """``(value, d/dpy, d/dpx)`` of :func:`bilinear_sample`."""
    x = as_tensor4(x)
    v, gy, gx = bilinear_gather(x[n, c], np.float64(py), np.float64(px), with_grad=True)
    return float(v), float(gy), float(gx)


# --- pointwise pieces --------------------------------------------------------


def logistic(v):
    v = np.asarray(v)
    # split by sign to avoid overflow in exp
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def silu(v):
    return v * logistic(v)


def silu_grad(v):
    s = logistic(v)
    return s * (1 + v * (1 - s))


@dataclass
class BatchNorm:
    """Inference-mode batch norm: ``scale * (v - mean) / sqrt(var + eps) + shift``."""

    scale: np.ndarray
    shift: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = BN_EPS

    def __post_init__(self):
        self.scale, self.shift, self.mean, self.var = (np.asarray(a) for a in (self.scale, self.shift, self.mean, self.var))
        shapes = {a.shape for a in (self.scale, self.shift, self.mean, self.var)}
        if len(shapes) != 1 or self.scale.ndim != 1:
            raise ShapeError(f"batch norm vectors must share one 1-D shape, got {shapes}")
        if np.any(self.var <= 0):
            raise SpecError("batch norm variance entries must be > 0")

    @property
    def channels(self) -> int:
        return self.scale.shape[0]

    @classmethod
    def identity(cls, c: int, dtype=np.float64) -> "BatchNorm":
        """Exactly the identity map (eps folded into var)."""
        one, zero = np.ones(c, dtype), np.zeros(c, dtype)
        return cls(one, zero.copy(), zero.copy(), one - BN_EPS)

    @classmethod
    def random(cls, c: int, rng, dtype=np.float64) -> "BatchNorm":
        return cls(
            rng.uniform(c, 0.5, 1.5, dtype=dtype),
            rng.uniform(c, -0.5, 0.5, dtype=dtype),
            rng.uniform(c, -0.5, 0.5, dtype=dtype),
            rng.uniform(c, 0.5, 1.5, dtype=dtype),
        )

    def gain(self, dtype) -> np.ndarray:
        return (self.scale / np.sqrt(self.var + self.eps)).astype(dtype)

    def __call__(self, v: np.ndarray) -> np.ndarray:
        if v.shape[1] != self.channels:
            raise ShapeError(f"channel axis: batch norm has {self.channels} channels, input {v.shape[1]}")
        d = v.dtype
        g = self.gain(d)[None, :, None, None]
        return g * (v - self.mean.astype(d)[None, :, None, None]) + self.shift.astype(d)[None, :, None, None]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad * self.gain(grad.dtype)[None, :, None, None]

    def param_count(self) -> int:
        return 2 * self.channels


# --- gradient checking -------------------------------------------------------


def finite_diff_grad(f: Callable[[np.ndarray], float], theta, step: float = 1e-6) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if step <= 0:
        raise ValueError("step must be > 0")
    theta = np.array(theta, dtype=np.float64).ravel()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        fp = float(f(theta))
        theta[i] = orig - step
        fm = float(f(theta))
        theta[i] = orig
        if not (math.isfinite(fp) and math.isfinite(fm)):
            raise NumericError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2 * step)
    return grad


@dataclass
class GradCheckReport:
    op_name: str
    max_rel_err: float
    tolerance: float
    step: float
    passed: bool = field(init=False)
    worst_index: int = -1

    def __post_init__(self):
        self.passed = bool(self.max_rel_err <= self.tolerance)


def relative_error(g_fd, g_an) -> np.ndarray:
    g_fd = np.asarray(g_fd, dtype=np.float64).ravel()
    g_an = np.asarray(g_an, dtype=np.float64).ravel()
    if g_fd.shape != g_an.shape:
        raise ShapeError(f"gradient lengths differ: {g_fd.size} vs {g_an.size}")
    for name, g in (("finite-difference", g_fd), ("analytic", g_an)):
        bad = np.flatnonzero(~np.isfinite(g))
        if bad.size:
            raise NumericError(f"{name} gradient is non-finite at coordinate {int(bad[0])}")
    return np.abs(g_fd - g_an) / np.maximum(1e-12, np.abs(g_fd) + np.abs(g_an))


def grad_check(op_name: str, forward: Callable, analytic: Callable, theta, tol: float = 1e-4,
               step: float = 1e-6) -> GradCheckReport:
    """Compare ``analytic(theta)`` against central differences of ``forward``.

    ``forward`` maps a flat float64 vector to a scalar; ``analytic`` maps the
    same vector to the gradient of that scalar.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    theta = np.asarray(theta, dtype=np.float64).ravel()
    g_fd = finite_diff_grad(forward, theta.copy(), step)
    g_an = analytic(theta.copy())
    err = relative_error(g_fd, g_an)
    worst = int(np.argmax(err)) if err.size else -1
    return GradCheckReport(op_name, float(err.max()) if err.size else 0.0, tol, step, worst_index=worst)
