"""C2f blocks: the standard split-transform-concat block and the variants
whose inner units are ASC blocks (``ascm``) or LKSC units (``lkscm``).

Every convolution outside the inner units is a Conv-BN-SiLU triple
(:class:`Cbs`) without bias, as in YOLOv8.

``dense_lk`` is the comparison variant used for cost accounting: the LKSCM
skeleton with each unit's three branches replaced by one dense ``K x K``
depthwise kernel.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .asc import AscParams, AscSpec, asc_block_forward
from .errors import InputError, ShapeError, SpecError
from .lksc import LkscPlan, LkscSpec, lksc_forward, random_plan
from .tensor import BatchNorm, ConvParams, ConvSpec, as_tensor4, conv2d_direct, silu

VARIANTS = ("standard", "ascm", "lkscm", "dense_lk")

# one bilinear read: four corner weights plus four weighted accumulations
BILINEAR_MACS = 8


@dataclass(frozen=True)
class C2fConfig:
    variant: str
    c_in: int
    c_out: int
    c_prime: Optional[int] = None
    n: int = 1
    faithful_eq6: bool = True
    kernel: int = 51
    tile: int = 5
    groups: int = 1
    shortcut: bool = True
    label: str = ""

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise SpecError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.c_prime is None:
            object.__setattr__(self, "c_prime", max(1, self.c_out // 2))
        if self.c_in < 1 or self.c_out < 1 or self.c_prime < 1:
            raise SpecError("channel counts must be >= 1")
        if self.n < 1:
            raise SpecError("n must be >= 1")
        if self.variant == "ascm" and self.c_prime % self.groups:
            raise SpecError(f"groups={self.groups} must divide c_prime={self.c_prime}")
        if self.variant in ("lkscm", "dense_lk"):
            self.lksc_spec()

    @property
    def concat_width(self) -> int:
        c = self.c_prime
        if self.variant == "ascm" and self.faithful_eq6:
            return 5 * c
        return (2 + self.n) * c

    def asc_spec(self) -> AscSpec:
        return AscSpec(self.c_prime, self.c_prime, 3, 3, groups=self.groups, stride=1, pad_h=1, pad_w=1)

    def lksc_spec(self) -> LkscSpec:
        return LkscSpec(self.c_prime, self.kernel, self.kernel, self.tile)

    def with_variant(self, variant: str) -> "C2fConfig":
        d = dict(self.__dict__)
        d["variant"] = variant
        return C2fConfig(**d)


@dataclass
class Cbs:
    conv: ConvParams
    bn: BatchNorm

    def __call__(self, x):
        return silu(self.bn(conv2d_direct(x, self.conv)))

    @classmethod
    def random(cls, c_in: int, c_out: int, k: int, rng, dtype=np.float64) -> "Cbs":
        spec = ConvSpec(c_in, c_out, k, k, 1, k // 2, k // 2)
        bound = 1.0 / math.sqrt(c_in * k * k)
        return cls(ConvParams.random(spec, rng, scale=bound, dtype=dtype), BatchNorm.random(c_out, rng, dtype))

    @classmethod
    def delta(cls, c_in: int, c_out: int, k: int, dtype=np.float64) -> "Cbs":
        """Kernel with a centred 1 on the channel diagonal (``i == o``), identity batch norm."""
        w = np.zeros((c_out, c_in, k, k), dtype)
        for i in range(min(c_in, c_out)):
            w[i, i, k // 2, k // 2] = 1.0
        return cls(ConvParams(ConvSpec(c_in, c_out, k, k, 1, k // 2, k // 2), w), BatchNorm.identity(c_out, dtype))


@dataclass
class Bottleneck:
    cv1: Cbs
    cv2: Cbs
    shortcut: bool = True

    def __call__(self, x):
        y = self.cv2(self.cv1(x))
        return x + y if self.shortcut else y


@dataclass
class DenseLkUnit:
    depthwise: ConvParams
    pointwise: ConvParams
    bn: BatchNorm
    shortcut: bool = True

    def __call__(self, x):
        y = silu(self.bn(conv2d_direct(conv2d_direct(x, self.depthwise), self.pointwise)))
        return x + y if self.shortcut else y


@dataclass
class LkscUnit:
    plan: LkscPlan
    shortcut: bool = True

    def __call__(self, x):
        y = lksc_forward(x, self.plan)
        return x + y if self.shortcut else y


@dataclass
class C2fParams:
    config: C2fConfig
    stem: Cbs
    final: Cbs
    units: list = field(default_factory=list)

    def __post_init__(self):
        cfg = self.config
        if self.stem.conv.spec.c_in != cfg.c_in or self.stem.conv.spec.c_out != 2 * cfg.c_prime:
            raise ShapeError(f"stem: expected {cfg.c_in}->{2 * cfg.c_prime}, got {self.stem.conv.spec}")
        if self.final.conv.spec.c_in != cfg.concat_width or self.final.conv.spec.c_out != cfg.c_out:
            raise ShapeError(f"final: expected {cfg.concat_width}->{cfg.c_out}, got {self.final.conv.spec}")
        if len(self.units) != cfg.n:
            raise ShapeError(f"expected {cfg.n} inner units, got {len(self.units)}")


def init_c2f(cfg: C2fConfig, rng, dtype=np.float64) -> C2fParams:
    """Random parameters for any variant (fan-in scaled uniform weights)."""
    c = cfg.c_prime
    stem = Cbs.random(cfg.c_in, 2 * c, 1, rng, dtype)
    units = []
    for _ in range(cfg.n):
        if cfg.variant == "standard":
            units.append(Bottleneck(Cbs.random(c, c, 3, rng, dtype), Cbs.random(c, c, 3, rng, dtype), cfg.shortcut))
        elif cfg.variant == "ascm":
            p = AscParams.random(cfg.asc_spec(), rng, dtype)
            p.base_weights *= 1.0 / math.sqrt(p.base_weights[0].size)
            units.append(p)
        elif cfg.variant == "lkscm":
            units.append(LkscUnit(random_plan(cfg.lksc_spec(), rng, dtype), cfg.shortcut))
        else:
            k = cfg.kernel
            dw = ConvParams.random(ConvSpec(c, c, k, k, 1, k // 2, k // 2, groups=c), rng, 1.0 / k, dtype)
            pw = ConvParams.random(ConvSpec(c, c, 1, 1, has_bias=True), rng, 1.0 / math.sqrt(c), dtype)
            units.append(DenseLkUnit(dw, pw, BatchNorm.random(c, rng, dtype), cfg.shortcut))
    final = Cbs.random(cfg.concat_width, cfg.c_out, 1, rng, dtype)
    return C2fParams(cfg, stem, final, units)


def _stem_split(x, params: C2fParams):
    x = as_tensor4(x)
    if x.shape[1] != params.config.c_in:
        raise ShapeError(f"channel axis: input has {x.shape[1]} channels, block expects {params.config.c_in}")
    stem = params.stem(x)
    c = params.config.c_prime
    return stem, stem[:, :c], stem[:, c:]


def _require(params: C2fParams, *variants: str) -> None:
    if params.config.variant not in variants:
        raise SpecError(f"block variant is {params.config.variant!r}, expected one of {variants}")


def _chain_concat(x, params: C2fParams) -> np.ndarray:
    """Standard C2f concat: both stem halves plus every unit output in the chain."""
    _, x1, x2 = _stem_split(x, params)
    parts = [x1, x2]
    y = x2
    for unit in params.units:
        y = asc_block_forward(y, unit) if isinstance(unit, AscParams) else unit(y)
        parts.append(y)
    return np.concatenate(parts, axis=1)


def _ascm_concat(x, params: C2fParams) -> np.ndarray:
    stem, x1, x2 = _stem_split(x, params)
    y2 = asc_block_forward(x2, params.units[0])
    y2p = y2
    for unit in params.units[1:]:
        y2p = asc_block_forward(y2p, unit)
    return np.concatenate([x1, stem, y2, y2p], axis=1)


def c2f_concat(x, params: C2fParams) -> np.ndarray:
    """The tensor fed to the final 1x1 convolution of the block."""
    cfg = params.config
    if cfg.variant == "ascm" and cfg.faithful_eq6:
        return _ascm_concat(x, params)
    return _chain_concat(x, params)


def c2f_forward(x, params: C2fParams) -> np.ndarray:
    """Standard C2f: stem, split, chained bottlenecks, concat, final conv."""
    _require(params, "standard")
    return params.final(_chain_concat(x, params))


def ascm_c2f_forward(x, params: C2fParams) -> np.ndarray:
    """C2f with ASC blocks as inner units.

    With ``faithful_eq6`` the final conv reads ``concat(X1, Conv(X), Y2, Y2')``
    (width ``5 c'``): ``Y2`` is the first ASC block applied to ``X2`` and
    ``Y2'`` the result of the remaining ``n - 1`` blocks (``Y2' = Y2`` for
    ``n = 1``). Without it the ASC chain is concatenated like a standard C2f.
    ASC units carry no residual connection.
    """
    _require(params, "ascm")
    return params.final(c2f_concat(x, params))


def lkscm_c2f_forward(x, params: C2fParams) -> np.ndarray:
    """Standard C2f skeleton with LKSC units in place of the bottlenecks."""
    _require(params, "lkscm")
    return params.final(_chain_concat(x, params))


def dense_lk_c2f_forward(x, params: C2fParams) -> np.ndarray:
    _require(params, "dense_lk")
    return params.final(_chain_concat(x, params))


_FORWARD = {
    "standard": c2f_forward,
    "ascm": ascm_c2f_forward,
    "lkscm": lkscm_c2f_forward,
    "dense_lk": dense_lk_c2f_forward,
}


def block_forward(x, params: C2fParams) -> np.ndarray:
    return _FORWARD[params.config.variant](x, params)


def stack_forward(x, blocks: list) -> np.ndarray:
    for p in blocks:
        x = block_forward(x, p)
    return x


# --- cost accounting ---------------------------------------------------------


@dataclass
class BlockCost:
    label: str
    variant: str
    params: int
    macs: int
    in_shape: tuple
    out_shape: tuple


@dataclass
class CostReport:
    blocks: list
    input_shape: tuple

    @property
    def total_params(self) -> int:
        return sum(b.params for b in self.blocks)

    @property
    def total_macs(self) -> int:
        return sum(b.macs for b in self.blocks)

    @property
    def variants(self) -> list:
        return [b.variant for b in self.blocks]

    def to_dict(self) -> dict:
        return {
            "input_shape": list(self.input_shape),
            "blocks": [
                {"label": b.label, "variant": b.variant, "params": b.params, "macs": b.macs,
                 "in_shape": list(b.in_shape), "out_shape": list(b.out_shape)}
                for b in self.blocks
            ],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }


def _cbs_cost(c_in: int, c_out: int, k: int, n: int, h: int, w: int) -> tuple:
    spec = ConvSpec(c_in, c_out, k, k, 1, k // 2, k // 2)
    return spec.param_count() + 2 * c_out, spec.macs(n, h, w)


def asc_cost(spec: AscSpec, n: int, h: int, w: int) -> tuple:
    """``(params, macs)`` of one ASC block (generator, sampling, weighted sum, BN).

    Sampling counts ``BILINEAR_MACS`` per sampled point plus one MAC for the
    modulation product; batch norm and SiLU are not counted as MACs.
    """
    base = spec.base_conv_spec()
    gen = spec.generator_spec()
    oh, ow = spec.output_hw(h, w)
    sampled = n * spec.c_in * spec.points * oh * ow
    params = base.param_count() + gen.param_count() + 2 * spec.c_out
    macs = gen.macs(n, h, w) + base.macs(n, h, w) + sampled * (BILINEAR_MACS + 1)
    return params, macs


def block_cost(cfg: C2fConfig, shape: tuple) -> BlockCost:
    n, c, h, w = shape
    if c != cfg.c_in:
        raise ShapeError(f"{cfg.label or cfg.variant}: channel axis is {c}, block expects {cfg.c_in}")
    cp = cfg.c_prime
    p_stem, m_stem = _cbs_cost(cfg.c_in, 2 * cp, 1, n, h, w)
    p_final, m_final = _cbs_cost(cfg.concat_width, cfg.c_out, 1, n, h, w)
    if cfg.variant == "standard":
        p_u, m_u = _cbs_cost(cp, cp, 3, n, h, w)
        p_u, m_u = 2 * p_u, 2 * m_u
    elif cfg.variant == "ascm":
        p_u, m_u = asc_cost(cfg.asc_spec(), n, h, w)
    elif cfg.variant == "lkscm":
        ls = cfg.lksc_spec()
        p_u, m_u = ls.param_count(), ls.macs(n, h, w)
    else:
        ls = cfg.lksc_spec()
        p_u, m_u = ls.dense_param_count(), ls.dense_macs(n, h, w)
    return BlockCost(
        cfg.label or cfg.variant, cfg.variant,
        p_stem + cfg.n * p_u + p_final, m_stem + cfg.n * m_u + m_final,
        tuple(shape), (n, cfg.c_out, h, w),
    )


def count_params_flops(cfg_list: list, input_shape) -> CostReport:
    """Exact parameter and MAC counts for a sequential stack of blocks.

    Parameters are weights, biases and batch-norm affine pairs. Conv MACs
    are ``n * c_out * h_out * w_out * (c_in / groups) * kh * kw``; shifts
    cost nothing. LKSC units count the non-padding taps of the three
    branches (``kh*A + A*kw + A*A`` per channel and pixel).
    """
    if not cfg_list:
        raise InputError("block list is empty")
    shape = tuple(int(v) for v in input_shape)
    if len(shape) != 4 or min(shape) < 1:
        raise ShapeError(f"input shape must be four positive dims, got {input_shape}")
    costs = []
    for cfg in cfg_list:
        bc = block_cost(cfg, shape)
        costs.append(bc)
        shape = bc.out_shape
    return CostReport(costs, tuple(int(v) for v in input_shape))


def parse_block_configs(doc) -> list:
    """Block-stack JSON (list of objects) to configs; errors name the field."""
    if not isinstance(doc, list):
        raise InputError("config: top level must be a list of block objects")
    if not doc:
        raise InputError("config: block list is empty")
    allowed = {"variant", "c_in", "c_out", "c_prime", "n", "kernel", "tile", "faithful_eq6", "groups",
               "shortcut", "label"}
    out = []
    for i, entry in enumerate(doc):
        where = f"config[{i}]"
        if not isinstance(entry, dict):
            raise InputError(f"{where}: expected an object")
        unknown = set(entry) - allowed
        if unknown:
            raise InputError(f"{where}.{sorted(unknown)[0]}: unknown field")
        for key in ("variant", "c_in", "c_out"):
            if key not in entry:
                raise InputError(f"{where}.{key}: missing")
        for key in ("c_in", "c_out", "c_prime", "n", "kernel", "tile", "groups"):
            if key in entry and entry[key] is not None and (not isinstance(entry[key], int) or isinstance(entry[key], bool)):
                raise InputError(f"{where}.{key}: expected an integer, got {entry[key]!r}")
        try:
            out.append(C2fConfig(**entry))
        except (SpecError, TypeError) as exc:
            raise InputError(f"{where}: {exc}") from exc
    return out
