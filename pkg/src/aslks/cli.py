"""Command-line harness: ``aslks {verify,bench,flops,metrics}``.

Exit codes: 0 pass, 1 verification failure, 2 usage or parse error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import statistics
import sys
import time

import numpy as np

from . import __version__
from .c2f import count_params_flops, parse_block_configs
from .errors import InputError, ShapeError, SpecError, VerificationError
from .lksc import LkscSpec, lksc_linear, random_plan
from .metrics import load_detections, load_ground_truth, map50
from .rng import SplitMix64
from .tensor import ConvParams, ConvSpec, conv2d_direct
from .verify import DTYPES, SUITES, run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _emit(text: str, out) -> None:
    if out:
        with open(out, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _parse_dims(raw: str) -> tuple:
    try:
        dims = tuple(int(v) for v in raw.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N,C,H,W integers, got {raw!r}")
    if len(dims) != 4 or min(dims) < 1:
        raise argparse.ArgumentTypeError(f"expected four positive integers N,C,H,W, got {raw!r}")
    return dims


# --- verify ------------------------------------------------------------------


def cmd_verify(args) -> int:
    t0 = time.perf_counter()
    report = run_suite(args.suite, args.seed, args.dtype)
    _emit(report.to_json(), args.out)
    failed = [c.name for c in report.cases if c.status != "pass"]
    print(f"verify {args.suite}: {len(report.cases) - len(failed)}/{len(report.cases)} cases passed "
          f"in {time.perf_counter() - t0:.2f}s", file=sys.stderr)
    for name in failed:
        print(f"FAILED {name}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


# --- bench -------------------------------------------------------------------


def dense_equivalent(plan) -> np.ndarray:
    """Embed the three branch kernels into one ``kh x kw`` depthwise kernel."""
    s = plan.spec
    c, a = s.channels, s.tile
    dense = np.zeros((c, s.kh, s.kw), dtype=plan.branch("vertical").kernel.dtype)
    cy, cx = (s.kh - 1) // 2, (s.kw - 1) // 2
    h = (a - 1) // 2
    dense[:, :, cx - h:cx + h + 1] += plan.branch("vertical").kernel
    dense[:, cy - h:cy + h + 1, :] += plan.branch("horizontal").kernel
    dense[:, cy - h:cy + h + 1, cx - h:cx + h + 1] += plan.branch("core").kernel
    return dense


def _time(fn, repeats: int) -> dict:
    fn()  # warm-up
    samples = []
    for _ in range(repeats):
        t = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t)
    return {"min_s": min(samples), "median_s": statistics.median(samples), "repeats": repeats}


def run_bench(input_shape, kernel: int, tile: int, repeats: int, seed: int = 0, dtype: str = "f32") -> dict:
    if repeats < 3:
        raise InputError("repeats must be >= 3")
    n, c, h, w = input_shape
    dt = DTYPES[dtype]
    spec = LkscSpec(c, kernel, kernel, tile)
    rng = SplitMix64(seed)
    plan = random_plan(spec, rng, dtype=dt)
    x = rng.uniform(input_shape, -1, 1, dtype=dt)
    half = kernel // 2
    dense = ConvParams(ConvSpec(c, c, kernel, kernel, 1, half, half, groups=c), dense_equivalent(plan)[:, None])

    def direct():
        return conv2d_direct(x, dense)

    def decomposed():
        return lksc_linear(x, plan)

    diff = float(np.max(np.abs(direct().astype(np.float64) - decomposed().astype(np.float64))))
    tol = 1e-12 if dt == np.float64 else 1e-5
    if not diff <= tol:
        raise VerificationError(f"direct and decomposed outputs differ by {diff:.3e} (tolerance {tol:g})")
    pix = n * h * w
    direct_stats = _time(direct, repeats)
    lksc_stats = _time(decomposed, repeats)
    return {
        "version": __version__,
        "seed": seed,
        "dtype": dtype,
        "input": list(input_shape),
        "kernel": kernel,
        "tile": tile,
        "max_abs_diff": diff,
        "paths": {
            "direct": {"macs": pix * c * spec.dense_taps, "params": c * spec.dense_taps, **direct_stats},
            "lksc": {"macs": pix * c * spec.branch_taps, "params": c * spec.branch_taps,
                     "tiles": [len(b.tiles) for b in plan.branches], **lksc_stats},
        },
        "mac_ratio": spec.branch_taps / spec.dense_taps,
        "param_ratio": spec.branch_taps / spec.dense_taps,
        "pointwise_macs": pix * c * c,
    }


def cmd_bench(args) -> int:
    report = run_bench(args.input, args.kernel, args.tile, args.repeats, args.seed, args.dtype)
    _emit(json.dumps(report, indent=2, sort_keys=True), args.out)
    return EXIT_OK


# --- flops -------------------------------------------------------------------


def _counterpart(cfgs, mapping: dict) -> list:
    return [cfg.with_variant(mapping.get(cfg.variant, cfg.variant)) for cfg in cfgs]


def run_flops(cfgs: list, input_shape) -> dict:
    modified = count_params_flops(cfgs, input_shape)
    baseline = count_params_flops(_counterpart(cfgs, {"ascm": "standard", "lkscm": "standard"}), input_shape)
    dense = count_params_flops(_counterpart(cfgs, {"lkscm": "dense_lk"}), input_shape)

    def sign(v):
        return (v > 0) - (v < 0)

    return {
        "version": __version__,
        "input_shape": list(input_shape),
        "stacks": {"modified": modified.to_dict(), "baseline": baseline.to_dict(),
                   "dense_large_kernel": dense.to_dict()},
        "direction": {
            "modified_le_dense_params": modified.total_params <= dense.total_params,
            "modified_le_dense_macs": modified.total_macs <= dense.total_macs,
            "params_diff_vs_baseline": modified.total_params - baseline.total_params,
            "params_diff_sign_vs_baseline": sign(modified.total_params - baseline.total_params),
            "macs_diff_vs_baseline": modified.total_macs - baseline.total_macs,
        },
    }


def flops_csv(report: dict) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(["stack", "block", "label", "variant", "params", "macs"])
    for name, stack in report["stacks"].items():
        for i, b in enumerate(stack["blocks"]):
            wr.writerow([name, i, b["label"], b["variant"], b["params"], b["macs"]])
        wr.writerow([name, "total", "", "", stack["total_params"], stack["total_macs"]])
    return buf.getvalue()


def cmd_flops(args) -> int:
    try:
        with open(args.config) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.config}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    cfgs = parse_block_configs(doc)
    shape = args.input or (1, cfgs[0].c_in, 64, 64)
    report = run_flops(cfgs, shape)
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.out:
        _emit(text, args.out)
        with open(os.path.splitext(args.out)[0] + ".csv", "w") as fh:
            fh.write(flops_csv(report))
    else:
        print(text)
    ok = report["direction"]["modified_le_dense_params"] and report["direction"]["modified_le_dense_macs"]
    return EXIT_OK if ok else EXIT_FAIL


# --- metrics -----------------------------------------------------------------


def cmd_metrics(args) -> int:
    dets = load_detections(args.detections)
    gts = load_ground_truth(args.ground_truth)
    _emit(map50(dets, gts, args.n_classes).to_json(), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aslks", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify", help="run oracle/invariant suites")
    p.add_argument("--suite", choices=("all",) + SUITES, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=tuple(DTYPES), default="f32")
    p.add_argument("--out")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("bench", help="time dense large-kernel vs shift decomposition")
    p.add_argument("--input", type=_parse_dims, default=(1, 16, 128, 128))
    p.add_argument("--kernel", type=int, default=51)
    p.add_argument("--tile", type=int, default=5)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=tuple(DTYPES), default="f32")
    p.add_argument("--out")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("flops", help="parameter and MAC accounting for a block stack")
    p.add_argument("--config", required=True)
    p.add_argument("--input", type=_parse_dims)
    p.add_argument("--out")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("metrics", help="per-class AP@0.5 and mAP@50")
    p.add_argument("--detections", required=True)
    p.add_argument("--ground-truth", required=True)
    p.add_argument("--n-classes", type=int, required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except VerificationError as exc:
        print(f"verification error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (InputError, ShapeError, SpecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
