"""Large kernel shift convolution.

A depthwise ``kh x kw`` kernel is approximated by three depthwise branches,
a ``kh x A`` vertical strip, an ``A x kw`` horizontal strip and an ``A x A``
core, whose outputs are summed. Each strip is then rewritten exactly as a
sum of ``A x A`` tile convolutions applied to shifted copies of the input:

    strip(x)[i] = sum_t conv_AxA(shift(x, -s_t), tile_t)[i]

The strip is zero padded to ``T*A`` taps (``T = ceil(K/A)``) so it splits
into ``T`` non-overlapping tiles. With the anchor of the padded strip at
``a = (T*A - 1) // 2``, tile ``t`` is centred ``s_t = t*A + (A-1)/2 - a``
taps from the anchor. The padding rows are split between both ends
(``lead = a - (K-1)//2`` in front) so the original strip stays centred and
the decomposition equals an ordinary "same" convolution with the unpadded
strip.

The branch sum feeds a 1x1 pointwise convolution, inference batch norm and
SiLU.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tensorio
from .errors import ShapeError, SpecError
from .tensor import (
    BatchNorm,
    ConvParams,
    ConvSpec,
    as_tensor4,
    conv2d_backward,
    conv2d_direct,
    shift2d,
    silu,
    silu_grad,
)

BRANCHES = ("vertical", "horizontal", "core")


@dataclass(frozen=True)
class LkscSpec:
    channels: int
    kh: int = 51
    kw: int = 51
    tile: int = 5
    stride: int = 1

    def __post_init__(self):
        if self.channels < 1:
            raise SpecError("channels must be positive")
        if self.tile < 1 or self.tile % 2 == 0:
            raise SpecError(f"tile size must be odd and >= 1, got {self.tile}")
        if self.kh < self.tile or self.kw < self.tile:
            raise SpecError(f"kernel {self.kh}x{self.kw} is smaller than tile {self.tile}")
        if self.stride != 1:
            raise SpecError("only stride 1 is supported for the large-kernel path")

    @property
    def branch_taps(self) -> int:
        """Kernel elements per channel across the three branches."""
        a = self.tile
        return self.kh * a + a * self.kw + a * a

    @property
    def dense_taps(self) -> int:
        return self.kh * self.kw

    @property
    def tap_ratio(self) -> float:
        return self.branch_taps / self.dense_taps

    def param_count(self) -> int:
        c = self.channels
        return c * self.branch_taps + c * c + c + 2 * c

    def dense_param_count(self) -> int:
        """Same module with one dense ``kh x kw`` depthwise kernel instead of the branches."""
        c = self.channels
        return c * self.dense_taps + c * c + c + 2 * c

    def macs(self, n: int, h: int, w: int) -> int:
        c = self.channels
        return n * h * w * (c * self.branch_taps + c * c)

    def dense_macs(self, n: int, h: int, w: int) -> int:
        c = self.channels
        return n * h * w * (c * self.dense_taps + c * c)


def tile_count(k: int, a: int) -> int:
    return math.ceil(k / a)


def tile_shifts(k: int, a: int) -> list:
    """Offsets of the tile centres from the padded-strip anchor."""
    t_count = tile_count(k, a)
    anchor = (t_count * a - 1) // 2
    return [t * a + (a - 1) // 2 - anchor for t in range(t_count)]


@dataclass
class TileShift:
    index: int
    kernel: np.ndarray  # (c, A, A)
    shift: tuple  # (dy, dx): tile centre relative to the branch anchor


@dataclass
class BranchPlan:
    name: str
    kernel: np.ndarray  # unpadded, (c, kh, A) / (c, A, kw) / (c, A, A)
    padded: np.ndarray
    anchor: tuple  # (row, col) of the output-aligned tap in ``padded``
    lead: tuple  # zero rows / cols in front of ``kernel`` inside ``padded``
    tiles: list = field(default_factory=list)

    @property
    def channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def tile_size(self) -> int:
        return self.tiles[0].kernel.shape[-1]


@dataclass
class LkscPlan:
    spec: LkscSpec
    branches: list
    pointwise: ConvParams
    bn: BatchNorm

    def branch(self, name: str) -> BranchPlan:
        for b in self.branches:
            if b.name == name:
                return b
        raise KeyError(name)


def _plan_branch(name: str, kernel: np.ndarray, axis: Optional[int], a: int) -> BranchPlan:
    c = kernel.shape[0]
    half = (a - 1) // 2
    if axis is None:
        tile = TileShift(0, kernel.copy(), (0, 0))
        return BranchPlan(name, kernel, kernel.copy(), (half, half), (0, 0), [tile])
    k = kernel.shape[1 + axis]
    t_count = tile_count(k, a)
    anchor = (t_count * a - 1) // 2
    lead = anchor - (k - 1) // 2
    trail = t_count * a - k - lead
    pad = [(0, 0), (0, 0), (0, 0)]
    pad[1 + axis] = (lead, trail)
    padded = np.pad(kernel, pad)
    tiles = []
    for t, s in enumerate(tile_shifts(k, a)):
        sl = [slice(None)] * 3
        sl[1 + axis] = slice(t * a, (t + 1) * a)
        shift = (s, 0) if axis == 0 else (0, s)
        tiles.append(TileShift(t, padded[tuple(sl)].copy(), shift))
    anch = (anchor, half) if axis == 0 else (half, anchor)
    lead2 = (lead, 0) if axis == 0 else (0, lead)
    return BranchPlan(name, kernel, padded, anch, lead2, tiles)


def plan_lksc(spec: LkscSpec, weights_v, weights_h, weights_c,
              pointwise: Optional[ConvParams] = None, bn: Optional[BatchNorm] = None) -> LkscPlan:
    """Split the three branch kernels into shifted ``A x A`` tiles.

    ``pointwise`` defaults to the identity 1x1 convolution with zero bias and
    ``bn`` to the identity batch norm.
    """
    c, a = spec.channels, spec.tile
    wv, wh, wc = (np.asarray(w) for w in (weights_v, weights_h, weights_c))
    for name, w, want in (("weights_v", wv, (c, spec.kh, a)), ("weights_h", wh, (c, a, spec.kw)),
                          ("weights_c", wc, (c, a, a))):
        if w.shape != want:
            raise ShapeError(f"{name}: shape {w.shape}, expected {want}")
    dtype = np.result_type(wv, wh, wc)
    if pointwise is None:
        pw_spec = ConvSpec(c, c, 1, 1, has_bias=True)
        pointwise = ConvParams(pw_spec, np.eye(c, dtype=dtype).reshape(c, c, 1, 1), np.zeros(c, dtype))
    if pointwise.spec.weight_shape != (c, c, 1, 1) or pointwise.spec.groups != 1:
        raise ShapeError(f"pointwise: expected a dense 1x1 {c}->{c} convolution, got {pointwise.spec}")
    if bn is None:
        bn = BatchNorm.identity(c, dtype)
    if bn.channels != c:
        raise ShapeError(f"bn: {bn.channels} channels, expected {c}")
    branches = [
        _plan_branch("vertical", wv, 0, a),
        _plan_branch("horizontal", wh, 1, a),
        _plan_branch("core", wc, None, a),
    ]
    return LkscPlan(spec, branches, pointwise, bn)


def random_plan(spec: LkscSpec, rng, dtype=np.float64, scale: Optional[float] = None) -> LkscPlan:
    """Uniform random kernels; by default each branch uses the fan-in bound ``1/sqrt(taps)``."""
    c, a = spec.channels, spec.tile

    def draw(shape):
        bound = scale if scale is not None else 1.0 / math.sqrt(shape[1] * shape[2])
        return rng.uniform(shape, -bound, bound, dtype=dtype)

    wv, wh, wc = draw((c, spec.kh, a)), draw((c, a, spec.kw)), draw((c, a, a))
    pw = ConvParams.random(ConvSpec(c, c, 1, 1, has_bias=True), rng, scale=1.0 / math.sqrt(c), dtype=dtype)
    return plan_lksc(spec, wv, wh, wc, pw, BatchNorm.random(c, rng, dtype))


def _tile_conv(tile: TileShift) -> ConvParams:
    c, a = tile.kernel.shape[0], tile.kernel.shape[-1]
    half = (a - 1) // 2
    return ConvParams(ConvSpec(c, c, a, a, 1, half, half, groups=c), tile.kernel[:, None])


def _check_channels(x: np.ndarray, c: int) -> None:
    if x.shape[1] != c:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, plan expects {c}")


def _canvas_margin(branch: BranchPlan) -> tuple:
    half = (branch.tile_size - 1) // 2
    my = max(abs(t.shift[0]) for t in branch.tiles)
    mx = max(abs(t.shift[1]) for t in branch.tiles)
    return (my + half if my else 0), (mx + half if mx else 0)


def shift_conv_forward(x, branch: BranchPlan) -> np.ndarray:
    """Sum of tile convolutions over shifted inputs, in tile order.

    Shifting a map discards the pixels pushed past its border, which the
    large kernel would still have seen. The input is therefore placed on a
    zero canvas wide enough for the largest shift plus the tile halo; the
    shifted tile convolutions run on the canvas and the result is cropped
    back, which makes the sum exactly equal to the large-kernel convolution
    everywhere, borders included.
    """
    x = as_tensor4(x)
    _check_channels(x, branch.channels)
    my, mx = _canvas_margin(branch)
    canvas = np.pad(x, ((0, 0), (0, 0), (my, my), (mx, mx)))
    out = np.zeros_like(canvas)
    for tile in branch.tiles:
        dy, dx = tile.shift
        out += conv2d_direct(shift2d(canvas, -dy, -dx), _tile_conv(tile))
    return np.ascontiguousarray(out[:, :, my:my + x.shape[2], mx:mx + x.shape[3]])


def anchored_conv(x, kernel, anchor: tuple) -> np.ndarray:
    """Depthwise convolution with ``kernel`` (c, kh, kw) placing tap ``anchor`` on the output pixel.

    Zero padding is asymmetric as needed, so output size equals input size.
    """
    x = as_tensor4(x)
    kernel = np.asarray(kernel)
    c, kh, kw = kernel.shape
    _check_channels(x, c)
    ay, ax = anchor
    xp = np.pad(x, ((0, 0), (0, 0), (ay, kh - 1 - ay), (ax, kw - 1 - ax)))
    return conv2d_direct(xp, ConvParams(ConvSpec(c, c, kh, kw, groups=c), kernel[:, None]))


def branch_reference(x, branch: BranchPlan) -> np.ndarray:
    """Direct convolution with the padded branch kernel at the plan's anchor."""
    return anchored_conv(x, branch.padded, branch.anchor)


def lksc_linear(x, plan: LkscPlan) -> np.ndarray:
    """Depthwise branch sum, before the pointwise mixer."""
    x = as_tensor4(x)
    _check_channels(x, plan.spec.channels)
    out = np.zeros_like(x)
    for b in plan.branches:
        out += shift_conv_forward(x, b)
    return out


def lksc_forward(x, plan: LkscPlan) -> np.ndarray:
    """SiLU(BN(pointwise(branch sum)))."""
    lin = lksc_linear(x, plan)
    return silu(plan.bn(conv2d_direct(lin, plan.pointwise)))


def lksc_backward(x, plan: LkscPlan, grad_out) -> tuple:
    """Gradients of :func:`lksc_forward`.

    Returns ``(grad_x, grad_branch_weights, grad_pointwise)`` where
    ``grad_branch_weights`` maps branch name to a gradient shaped like the
    unpadded branch kernel and ``grad_pointwise`` is ``(grad_w, grad_b)``.
    """
    x = as_tensor4(x)
    grad_out = np.asarray(grad_out, dtype=x.dtype)
    if grad_out.shape != x.shape:
        raise ShapeError(f"grad_out: shape {grad_out.shape}, expected {x.shape}")
    lin = lksc_linear(x, plan)
    z = conv2d_direct(lin, plan.pointwise)
    u = plan.bn(z)
    g_z = plan.bn.backward(grad_out * silu_grad(u))
    g_lin, g_pw_w, g_pw_b = conv2d_backward(lin, plan.pointwise, g_z)

    grad_x = np.zeros_like(x)
    grads = {}
    for b in plan.branches:
        g_pad = np.zeros(b.padded.shape, dtype=x.dtype)
        a = b.tile_size
        my, mx = _canvas_margin(b)
        canvas = np.pad(x, ((0, 0), (0, 0), (my, my), (mx, mx)))
        g_canvas_out = np.pad(g_lin, ((0, 0), (0, 0), (my, my), (mx, mx)))
        g_canvas = np.zeros_like(canvas)
        for tile in b.tiles:
            dy, dx = tile.shift
            xs = shift2d(canvas, -dy, -dx)
            g_xs, g_t, _ = conv2d_backward(xs, _tile_conv(tile), g_canvas_out)
            g_canvas += shift2d(g_xs, dy, dx)
            if b.name == "vertical":
                g_pad[:, tile.index * a:(tile.index + 1) * a, :] += g_t[:, 0]
            elif b.name == "horizontal":
                g_pad[:, :, tile.index * a:(tile.index + 1) * a] += g_t[:, 0]
            else:
                g_pad += g_t[:, 0]
        grad_x += g_canvas[:, :, my:my + x.shape[2], mx:mx + x.shape[3]]
        ly, lx = b.lead
        kh, kw = b.kernel.shape[1:]
        grads[b.name] = g_pad[:, ly:ly + kh, lx:lx + kw]
    return grad_x, grads, (g_pw_w, g_pw_b)


# --- serialization -----------------------------------------------------------


def plan_to_json(plan: LkscPlan, tensor_file: str) -> dict:
    s = plan.spec
    return {
        "channels": s.channels, "kh": s.kh, "kw": s.kw, "tile": s.tile, "stride": s.stride,
        "tensor_file": tensor_file,
        "branches": [
            {
                "name": b.name,
                "weights": f"branch/{b.name}",
                "padded_shape": list(b.padded.shape),
                "anchor": list(b.anchor),
                "lead": list(b.lead),
                "tiles": [{"index": t.index, "shift": list(t.shift)} for t in b.tiles],
            }
            for b in plan.branches
        ],
        "pointwise": {"weights": "pointwise/weights", "bias": "pointwise/bias"},
        "bn": {k: f"bn/{k}" for k in ("scale", "shift", "mean", "var")},
    }


def save_plan(plan: LkscPlan, json_path) -> None:
    """Write the JSON plan and a sibling ``.t4b`` tensor bundle it references."""
    bundle_path = os.path.splitext(str(json_path))[0] + ".t4b"
    named = {f"branch/{b.name}": b.kernel for b in plan.branches}
    named["pointwise/weights"] = plan.pointwise.weights
    named["pointwise/bias"] = plan.pointwise.bias
    for k in ("scale", "shift", "mean", "var"):
        named[f"bn/{k}"] = getattr(plan.bn, k)
    tensorio.save_bundle(bundle_path, named)
    with open(json_path, "w") as fh:
        json.dump(plan_to_json(plan, os.path.basename(bundle_path)), fh, indent=2)


def load_plan(json_path) -> LkscPlan:
    with open(json_path) as fh:
        doc = json.load(fh)
    tensors = tensorio.load_bundle(os.path.join(os.path.dirname(str(json_path)), doc["tensor_file"]))
    spec = LkscSpec(doc["channels"], doc["kh"], doc["kw"], doc["tile"], doc["stride"])
    c, a = spec.channels, spec.tile
    refs = {b["name"]: b for b in doc["branches"]}
    wv = tensors[refs["vertical"]["weights"]].reshape(c, spec.kh, a)
    wh = tensors[refs["horizontal"]["weights"]].reshape(c, a, spec.kw)
    wc = tensors[refs["core"]["weights"]].reshape(c, a, a)
    pw = ConvParams(ConvSpec(c, c, 1, 1, has_bias=True), tensors[doc["pointwise"]["weights"]].reshape(c, c, 1, 1),
                    tensors[doc["pointwise"]["bias"]].ravel())
    bn = BatchNorm(*(tensors[doc["bn"][k]].ravel() for k in ("scale", "shift", "mean", "var")))
    plan = plan_lksc(spec, wv, wh, wc, pw, bn)
    for b in plan.branches:
        stored = [tuple(t["shift"]) for t in refs[b.name]["tiles"]]
        if stored != [t.shift for t in b.tiles]:
            raise SpecError(f"{b.name}: stored shift table {stored} disagrees with the planned one")
    return plan
