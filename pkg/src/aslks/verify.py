"""Oracle suites behind ``aslks verify``.

Each suite returns a :class:`VerifyReport`. Reports contain only values
that are a deterministic function of (suite, seed, dtype), so two runs
with the same arguments serialize to identical bytes.

Test hook: setting ``ASLKS_CORRUPT_FIXTURE`` to a suite name perturbs that
suite's degenerate-equality fixture by 1e-3 so the failure path can be
exercised (currently honoured by ``asc`` and ``lksc``).
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import __version__
from .asc import AscFields, AscParams, AscSpec, asc_backward, asc_forward
from .c2f import (
    C2fConfig,
    Cbs,
    c2f_concat,
    count_params_flops,
    init_c2f,
    block_forward,
)
from .lksc import (
    LkscSpec,
    anchored_conv,
    branch_reference,
    lksc_backward,
    lksc_forward,
    lksc_linear,
    plan_lksc,
    random_plan,
    shift_conv_forward,
)
from .metrics import Box, Detection, GroundTruth, map50
from .oracles import asc_loops, bilinear_tent, conv2d_loops, map50_exhaustive
from .rng import SplitMix64
from .tensor import (
    ConvParams,
    ConvSpec,
    bilinear_gather,
    conv2d_backward,
    conv2d_direct,
    grad_check,
    shift2d,
)

SUITES = ("tensor", "asc", "lksc", "c2f", "metrics")
DTYPES = {"f32": np.float32, "f64": np.float64}
GRAD_TOL = 1e-4
GRAD_STEP = 1e-6


@dataclass
class Case:
    name: str
    status: str
    max_err: float
    tolerance: float
    seed: int


@dataclass
class VerifyReport:
    suite: str
    seed: int
    dtype: str
    cases: list = field(default_factory=list)
    version: str = __version__

    @property
    def passed(self) -> bool:
        return all(c.status == "pass" for c in self.cases)

    def add(self, name: str, err: float, tol: float, seed: int) -> None:
        err = float(err)
        ok = bool(np.isfinite(err) and err <= tol)
        self.cases.append(Case(name, "pass" if ok else "fail", err, float(tol), int(seed)))

    def to_dict(self) -> dict:
        return {
            "suite": self.suite,
            "seed": self.seed,
            "dtype": self.dtype,
            "version": self.version,
            "passed": self.passed,
            "cases": [asdict(c) for c in self.cases],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _corrupt(suite: str) -> float:
    return 1e-3 if os.environ.get("ASLKS_CORRUPT_FIXTURE", "") == suite else 0.0


def _eq_tol(dtype) -> float:
    """Forward equivalence tolerance: exact at f64 up to summation reorder."""
    return 1e-12 if dtype == np.float64 else 1e-5


def _max_abs(a, b) -> float:
    return float(np.max(np.abs(np.asarray(a, np.float64) - np.asarray(b, np.float64))))


# --- tensor ------------------------------------------------------------------


def suite_tensor(report: VerifyReport, seed: int, dtype) -> None:
    rng = SplitMix64(seed)
    for groups in (1, 2):
        spec = ConvSpec(2, 4, 3, 3, 1, 1, 1, groups=groups, has_bias=True)
        p = ConvParams.random(spec, rng, dtype=dtype)
        x = rng.uniform((1, 2, 5, 5), -1, 1, dtype=dtype)
        got = conv2d_direct(x, p)
        want = conv2d_loops(x, p.weights, p.bias, 1, 1, 1, groups)
        tol = 0.0 if dtype == np.float64 else 1e-6
        report.add(f"tensor/conv_vs_loops/g{groups}", _max_abs(got, want), tol, seed)

    x = rng.uniform((2, 3, 6, 7), -1, 1, dtype=dtype)
    a, b = 2, -3
    back = shift2d(shift2d(x, a, b), -a, -b)
    kept = shift2d(shift2d(np.ones_like(x), a, b), -a, -b) == 1
    report.add("tensor/shift_roundtrip", _max_abs(back[kept], x[kept]), 0.0, seed)

    plane = rng.uniform((5, 6), -1, 1)
    py = rng.uniform(40, -1.5, 5.5)
    px = rng.uniform(40, -1.5, 6.5)
    got = bilinear_gather(plane, py, px)
    want = [bilinear_tent(plane, u, v) for u, v in zip(py, px)]
    report.add("tensor/bilinear_vs_tent", _max_abs(got, want), 1e-14, seed)

    for s in range(5):
        r = SplitMix64(seed * 1000 + s)
        spec = ConvSpec(2, 3, 3, 3, 1, 1, 1, has_bias=True)
        p = ConvParams.random(spec, r)
        x = r.uniform((1, 2, 4, 4), -1, 1)
        go = r.uniform((1, 3, 4, 4), -1, 1)
        theta = np.concatenate([x.ravel(), p.weights.ravel(), p.bias])
        nx, nw = x.size, p.weights.size

        def unpack(t):
            return t[:nx].reshape(x.shape), ConvParams(spec, t[nx:nx + nw].reshape(p.weights.shape), t[nx + nw:])

        def fwd(t):
            xx, pp = unpack(t)
            return float(np.sum(conv2d_direct(xx, pp) * go))

        def ana(t):
            xx, pp = unpack(t)
            gx, gw, gb = conv2d_backward(xx, pp, go)
            return np.concatenate([gx.ravel(), gw.ravel(), gb])

        rep = grad_check("conv2d", fwd, ana, theta, GRAD_TOL, GRAD_STEP)
        report.add(f"tensor/conv_grad/s{s}", rep.max_rel_err, GRAD_TOL, seed * 1000 + s)

    for s in range(5):
        r = SplitMix64(seed * 1000 + 100 + s)
        plane = r.uniform((5, 5), -1, 1)
        pos = _off_lattice(r, 24, 0.2, 3.8)

        def fwd(t):
            return float(np.sum(bilinear_gather(plane, t[:12], t[12:])))

        def ana(t):
            _, gy, gx = bilinear_gather(plane, t[:12], t[12:], with_grad=True)
            return np.concatenate([gy, gx])

        rep = grad_check("bilinear_position", fwd, ana, pos, GRAD_TOL, GRAD_STEP)
        report.add(f"tensor/bilinear_position_grad/s{s}", rep.max_rel_err, GRAD_TOL, seed * 1000 + 100 + s)


def _off_lattice(rng, n: int, low: float, high: float, margin: float = 1e-3) -> np.ndarray:
    """Coordinates whose fractional part stays at least ``margin`` from 0 and 1."""
    v = rng.uniform(n, low, high)
    frac = v - np.floor(v)
    return np.floor(v) + np.clip(frac, margin * 2, 1 - margin * 2)


def _asc_fields_off_lattice(rng, spec: AscSpec, n: int, oh: int, ow: int, scale: float = 0.9) -> AscFields:
    gk = spec.groups * spec.points
    off = _off_lattice(rng, n * 2 * gk * oh * ow, -scale, scale)
    mod = rng.uniform(n * gk * oh * ow, 0.05, 0.95)
    return AscFields(off.reshape(n, 2 * gk, oh, ow), mod.reshape(n, gk, oh, ow))


# --- asc ---------------------------------------------------------------------


def suite_asc(report: VerifyReport, seed: int, dtype) -> None:
    rng = SplitMix64(seed)
    corrupt = _corrupt("asc")
    for groups in (1, 2, 4):
        for k in (1, 3):
            spec = AscSpec(4, 8, k, k, groups=groups, pad_h=k // 2, pad_w=k // 2)
            p = AscParams.random(spec, rng, dtype=dtype)
            x = rng.uniform((2, 4, 6, 6), -1, 1, dtype=dtype)
            fields = AscFields.constant(spec, 2, 6, 6, dtype=dtype)
            want = conv2d_direct(x, p.base_conv())
            p.base_weights = p.base_weights + corrupt
            got = asc_forward(x, p, fields)
            report.add(f"asc/degenerate/g{groups}k{k}", _max_abs(got, want), 0.0 if dtype == np.float64 else 1e-6, seed)

    for groups in (1, 2):
        spec = AscSpec(2, 4, 3, 3, groups=groups, stride=1, pad_h=1, pad_w=1)
        p = AscParams.random(spec, rng, dtype=np.float64)
        x = rng.uniform((1, 2, 5, 6), -1, 1)
        fields = _asc_fields_off_lattice(rng, spec, 1, 5, 6, scale=1.6)
        got = asc_forward(x, p, fields)
        want = asc_loops(x, p.base_weights, fields.offsets, fields.modulation, 3, 3, groups, 1, 1, 1)
        report.add(f"asc/eq2_loops/g{groups}", _max_abs(got, want), 1e-12, seed)

    spec = AscSpec(4, 4, 3, 3, groups=2)
    p = AscParams.random(spec, rng, dtype=dtype)
    x = rng.uniform((1, 4, 6, 6), -1, 1, dtype=dtype)
    fields = _asc_fields_off_lattice(rng, spec, 1, 6, 6)
    fields = AscFields(fields.offsets.astype(dtype), fields.modulation.astype(dtype))
    s = 0.375
    scaled = AscFields(fields.offsets, fields.modulation * dtype(s))
    err = _max_abs(asc_forward(x, p, scaled), s * asc_forward(x, p, fields).astype(np.float64))
    report.add("asc/modulation_scaling", err, 1e-12 if dtype == np.float64 else 1e-5, seed)

    for s_idx in range(5):
        sd = seed * 1000 + 200 + s_idx
        rep = asc_grad_check(sd)
        for name, r in rep.items():
            report.add(f"asc/grad_{name}/s{s_idx}", r.max_rel_err, GRAD_TOL, sd)


def asc_grad_check(seed: int, shape=(1, 2, 6, 6), groups: int = 2) -> dict:
    """Gradient checks for all four gradient groups of ``asc_forward`` at f64."""
    rng = SplitMix64(seed)
    spec = AscSpec(shape[1], shape[1], 3, 3, groups=groups)
    p = AscParams.random(spec, rng)
    x = rng.uniform(shape, -1, 1)
    n, _, h, w = shape
    fields = _asc_fields_off_lattice(rng, spec, n, h, w, scale=0.45)
    go = rng.uniform((n, spec.c_out, h, w), -1, 1)
    parts = {
        "x": x, "base_weights": p.base_weights, "offsets": fields.offsets, "modulation": fields.modulation,
    }
    out = {}
    for i, name in enumerate(parts):
        base = dict(parts)

        def fwd(t, name=name, base=base):
            vals = dict(base)
            vals[name] = t.reshape(parts[name].shape)
            pp = AscParams(spec, vals["base_weights"], p.generator, p.bn)
            return float(np.sum(asc_forward(vals["x"], pp, AscFields(vals["offsets"], vals["modulation"])) * go))

        def ana(t, i=i, name=name, base=base):
            vals = dict(base)
            vals[name] = t.reshape(parts[name].shape)
            pp = AscParams(spec, vals["base_weights"], p.generator, p.bn)
            return asc_backward(vals["x"], pp, AscFields(vals["offsets"], vals["modulation"]), go)[i].ravel()

        out[name] = grad_check(f"asc/{name}", fwd, ana, parts[name].ravel(), GRAD_TOL, GRAD_STEP)
    return out


# --- lksc --------------------------------------------------------------------


def suite_lksc(report: VerifyReport, seed: int, dtype) -> None:
    corrupt = _corrupt("lksc")
    for s in range(3):
        sd = seed * 1000 + 300 + s
        rng = SplitMix64(sd)
        plan = random_plan(LkscSpec(2, 51, 51, 5), rng, dtype=dtype)
        x = rng.uniform((1, 2, 40, 40), -1, 1, dtype=dtype)
        for b in plan.branches:
            want = branch_reference(x, b)
            if corrupt:
                b.tiles[0].kernel = b.tiles[0].kernel + dtype(corrupt)
            report.add(f"lksc/exact/{b.name}/s{s}", _max_abs(shift_conv_forward(x, b), want), _eq_tol(dtype), sd)

    rng = SplitMix64(seed)
    plan = random_plan(LkscSpec(2, 51, 51, 5), rng, dtype=dtype)
    report.add("lksc/tile_count_51_5", abs(len(plan.branch("vertical").tiles) - 11), 0, seed)
    x = rng.uniform((1, 2, 24, 24), -1, 1, dtype=dtype)
    full = sum(anchored_conv(x, b.kernel, ((b.kernel.shape[1] - 1) // 2, (b.kernel.shape[2] - 1) // 2))
               for b in plan.branches)
    report.add("lksc/linear_vs_full_kernels", _max_abs(lksc_linear(x, plan), full), _eq_tol(dtype), seed)

    for s in range(5):
        sd = seed * 1000 + 400 + s
        reps = lksc_grad_check(sd)
        for name, r in reps.items():
            report.add(f"lksc/grad_{name}/s{s}", r.max_rel_err, GRAD_TOL, sd)


def lksc_grad_check(seed: int, shape=(1, 2, 12, 12), kernel: int = 7, tile: int = 5) -> dict:
    rng = SplitMix64(seed)
    c = shape[1]
    spec = LkscSpec(c, kernel, kernel, tile)
    plan = random_plan(spec, rng)
    x = rng.uniform(shape, -1, 1)
    go = rng.uniform(shape, -1, 1)
    names = ["x", "vertical", "horizontal", "core", "pointwise_w", "pointwise_b"]
    vals = {
        "x": x,
        "vertical": plan.branch("vertical").kernel,
        "horizontal": plan.branch("horizontal").kernel,
        "core": plan.branch("core").kernel,
        "pointwise_w": plan.pointwise.weights,
        "pointwise_b": plan.pointwise.bias,
    }

    def build(v):
        pw = ConvParams(plan.pointwise.spec, v["pointwise_w"], v["pointwise_b"])
        return plan_lksc(spec, v["vertical"], v["horizontal"], v["core"], pw, plan.bn)

    def pick(grads, name):
        gx, gb, (gw, gbias) = grads
        return {"x": gx, "pointwise_w": gw, "pointwise_b": gbias}.get(name, gb.get(name))

    out = {}
    for name in names:
        def with_t(t, name=name):
            v = dict(vals)
            v[name] = t.reshape(vals[name].shape)
            return v

        def fwd(t, name=name):
            v = with_t(t)
            return float(np.sum(lksc_forward(v["x"], build(v)) * go))

        def ana(t, name=name):
            v = with_t(t)
            return pick(lksc_backward(v["x"], build(v), go), name).ravel()

        out[name] = grad_check(f"lksc/{name}", fwd, ana, vals[name].ravel(), GRAD_TOL, GRAD_STEP)
    return out


# --- c2f ---------------------------------------------------------------------


def suite_c2f(report: VerifyReport, seed: int, dtype) -> None:
    rng = SplitMix64(seed)
    x = rng.uniform((1, 8, 10, 10), -1, 1, dtype=dtype)
    for n in (1, 2, 3):
        cfg = C2fConfig("ascm", 8, 8, c_prime=4, n=n, groups=2)
        params = init_c2f(cfg, rng, dtype)
        report.add(f"c2f/ascm_concat_width/n{n}", abs(c2f_concat(x, params).shape[1] - 5 * cfg.c_prime), 0, seed)
    for variant in ("standard", "lkscm"):
        cfg = C2fConfig(variant, 8, 6, c_prime=4, n=2, kernel=7, tile=5)
        params = init_c2f(cfg, rng, dtype)
        report.add(f"c2f/width/{variant}", abs(c2f_concat(x, params).shape[1] - 4 * 4), 0, seed)
        y = block_forward(x, params)
        report.add(f"c2f/shape/{variant}", 0 if y.shape == (1, 6, 10, 10) else 1, 0, seed)
        report.add(f"c2f/composition/{variant}", _max_abs(y, _compose(x, params)), _eq_tol(dtype), seed)

    ls = LkscSpec(32, 51, 51, 5)
    report.add("c2f/lksc_tap_ratio", abs(round(ls.tap_ratio, 4) - 0.2057), 1e-4, seed)
    cfg = C2fConfig("lkscm", 64, 64, c_prime=32, n=1)
    mod = count_params_flops([cfg], (1, 64, 64, 64))
    dense = count_params_flops([cfg.with_variant("dense_lk")], (1, 64, 64, 64))
    report.add("c2f/lkscm_params_below_dense", 0 if mod.total_params < dense.total_params else 1, 0, seed)
    report.add("c2f/lkscm_macs_below_dense", 0 if mod.total_macs < dense.total_macs else 1, 0, seed)


def _compose(x, params):
    """Block output rebuilt from its published pieces."""
    cfg = params.config
    s = params.stem(x)
    c = cfg.c_prime
    parts = [s[:, :c], s[:, c:]]
    y = s[:, c:]
    for u in params.units:
        if cfg.variant == "standard":
            t = u.cv2(u.cv1(y))
        else:
            t = lksc_forward(y, u.plan)
        y = y + t if u.shortcut else t
        parts.append(y)
    return params.final(np.concatenate(parts, axis=1))


# --- metrics -----------------------------------------------------------------


def random_detection_instance(rng, n_classes: int = 2, max_dets: int = 5, max_gts: int = 3):
    """Small random detection problem on two images with unique confidences."""
    dets, gts = [], []
    for c in range(n_classes):
        for _ in range(int(rng.integers(0, max_gts + 1))):
            img = int(rng.integers(0, 2))
            x1, y1 = rng.uniform(2, 0, 20)
            w, h = rng.uniform(2, 4, 10)
            gts.append(GroundTruth(img, c, Box(x1, y1, x1 + w, y1 + h)))
        for _ in range(int(rng.integers(0, max_dets + 1))):
            img = int(rng.integers(0, 2))
            if gts and rng.uniform(1)[0] < 0.6:
                same = [g for g in gts if g.class_id == c] or gts
                g = same[int(rng.integers(0, len(same)))]
                jit = rng.uniform(4, -2, 2)
                b = g.box
                box = Box(b.x1 + jit[0], b.y1 + jit[1], b.x2 + jit[2] + 2.5, b.y2 + jit[3] + 2.5)
                img = g.image_id
            else:
                x1, y1 = rng.uniform(2, 0, 20)
                box = Box(x1, y1, x1 + 6, y1 + 6)
            dets.append(Detection(img, c, box, float(rng.uniform(1)[0])))
    return dets, gts


def _as_tuples(dets, gts):
    d = [(x.image_id, x.class_id, (x.box.x1, x.box.y1, x.box.x2, x.box.y2), x.confidence) for x in dets]
    g = [(x.image_id, x.class_id, (x.box.x1, x.box.y1, x.box.x2, x.box.y2)) for x in gts]
    return d, g


def suite_metrics(report: VerifyReport, seed: int, dtype) -> None:
    rng = SplitMix64(seed)
    worst = 0.0
    for _ in range(200):
        dets, gts = random_detection_instance(rng, n_classes=2)
        got = map50(dets, gts, 2).map50
        want = map50_exhaustive(*_as_tuples(dets, gts), 2)
        worst = max(worst, abs(got - want))
    report.add("metrics/map50_vs_exhaustive", worst, 1e-12, seed)

    gt = [GroundTruth(0, 0, Box(0, 0, 10, 10)), GroundTruth(0, 1, Box(0, 0, 10, 10)),
          GroundTruth(1, 1, Box(0, 0, 10, 10))]
    det = [Detection(0, 0, Box(0, 0, 10, 10), 0.9), Detection(0, 1, Box(0, 0, 10, 10), 0.9),
           Detection(1, 1, Box(50, 50, 60, 60), 0.8)]
    report.add("metrics/hand_two_class", abs(map50(det, gt, 2).map50 - 0.75), 1e-12, seed)


_SUITES = {
    "tensor": suite_tensor,
    "asc": suite_asc,
    "lksc": suite_lksc,
    "c2f": suite_c2f,
    "metrics": suite_metrics,
}


def run_suite(suite: str, seed: int = 0, dtype: str = "f64") -> VerifyReport:
    names = SUITES if suite == "all" else (suite,)
    for n in names:
        if n not in _SUITES:
            raise ValueError(f"unknown suite {suite!r}; choose from all, {', '.join(SUITES)}")
    if dtype not in DTYPES:
        raise ValueError(f"unknown dtype {dtype!r}; choose f32 or f64")
    report = VerifyReport(suite, seed, dtype)
    for n in names:
        _SUITES[n](report, seed, DTYPES[dtype])
    return report
