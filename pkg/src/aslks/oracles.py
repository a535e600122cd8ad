"""Scalar brute-force transcriptions used to check the vectorized operators.

These are intentionally naive: pure Python loops over every index, no
shared helpers with the implementations they check. Only use them on small
inputs.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_loops(x, w, bias=None, stride=1, pad_h=0, pad_w=0, groups=1) -> np.ndarray:
    """Six-deep nested-loop grouped cross-correlation (channel, row, column order)."""
    n, c_in, h, wd = x.shape
    c_out, cig, kh, kw = w.shape
    cog = c_out // groups
    oh = (h + 2 * pad_h - kh) // stride + 1
    ow = (wd + 2 * pad_w - kw) // stride + 1
    out = np.zeros((n, c_out, oh, ow), dtype=x.dtype)
    for b in range(n):
        for o in range(c_out):
            g = o // cog
            for i in range(oh):
                for j in range(ow):
                    acc = x.dtype.type(0)
                    for ci in range(cig):
                        c = g * cig + ci
                        for ky in range(kh):
                            for kx in range(kw):
                                r = i * stride - pad_h + ky
                                s = j * stride - pad_w + kx
                                v = x[b, c, r, s] if 0 <= r < h and 0 <= s < wd else x.dtype.type(0)
                                acc += w[o, ci, ky, kx] * v
                    if bias is not None:
                        acc += bias[o]
                    out[b, o, i, j] = acc
    return out


def bilinear_tent(plane, py: float, px: float) -> float:
    """Bilinear value as a sum of tent-weighted lattice points (zero outside)."""
    h, w = plane.shape
    total = 0.0
    for yi in (math.floor(py), math.floor(py) + 1):
        for xi in (math.floor(px), math.floor(px) + 1):
            wy = max(0.0, 1.0 - abs(py - yi))
            wx = max(0.0, 1.0 - abs(px - xi))
            if 0 <= yi < h and 0 <= xi < w:
                total += wy * wx * float(plane[yi, xi])
    return total


def asc_loops(x, base_w, offsets, modulation, kh, kw, groups, stride=1, pad_h=0, pad_w=0) -> np.ndarray:
    """Grouped deformable sum written out point by point.

    ``y[o](p0) = sum_ci sum_k w[o, ci, k] * m[g, k](p0) * x[g*cig + ci](p0*s - pad + p_k + dp[g, k](p0))``
    """
    n, c_in, h, wd = x.shape
    c_out = base_w.shape[0]
    cig, cog = c_in // groups, c_out // groups
    k_pts = kh * kw
    oh, ow = offsets.shape[2], offsets.shape[3]
    out = np.zeros((n, c_out, oh, ow))
    for b in range(n):
        for o in range(c_out):
            g = o // cog
            for i in range(oh):
                for j in range(ow):
                    acc = 0.0
                    for ci in range(cig):
                        for k in range(k_pts):
                            ky, kx = divmod(k, kw)
                            ch = 2 * (g * k_pts + k)
                            py = i * stride - pad_h + ky + float(offsets[b, ch, i, j])
                            px = j * stride - pad_w + kx + float(offsets[b, ch + 1, i, j])
                            m = float(modulation[b, g * k_pts + k, i, j])
                            acc += float(base_w[o, ci, ky, kx]) * (bilinear_tent(x[b, g * cig + ci], py, px) * m)
                    out[b, o, i, j] = acc
    return out


def _iou(a, b) -> float:
    ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _prefix_pr(ranked, gts, k):
    """Precision and recall of the top-``k`` detections, matched from scratch."""
    used = [False] * len(gts)
    tp = 0
    for d in ranked[:k]:
        best, best_v = -1, -1.0
        for j, g in enumerate(gts):
            if used[j] or g[0] != d[0]:
                continue
            v = _iou(d[1], g[1])
            if v >= 0.5 and v > best_v:
                best, best_v = j, v
        if best >= 0:
            used[best] = True
            tp += 1
    return tp / k, tp / len(gts)


def ap_exhaustive(dets, gts) -> float:
    """AP from every confidence cut-off, each evaluated independently.

    ``dets``: list of ``(image_id, box, confidence)``; ``gts``: list of
    ``(image_id, box)``. For each recall level reached, the interpolated
    precision is the best precision over all cut-offs with at least that
    recall.
    """
    if not gts or not dets:
        return 0.0
    ranked = [d for _, d in sorted(enumerate(dets), key=lambda t: (-t[1][2], t[0]))]
    points = [_prefix_pr(ranked, gts, k) for k in range(1, len(ranked) + 1)]
    ap, prev_r = 0.0, 0.0
    for _, r in points:
        if r > prev_r:
            best_p = max(p for p, r2 in points if r2 >= r)
            ap += (r - prev_r) * best_p
            prev_r = r
    return ap


def map50_exhaustive(dets, gts, n_classes: int) -> float:
    """``dets``: (image_id, class_id, box, conf); ``gts``: (image_id, class_id, box)."""
    total = 0.0
    for c in range(n_classes):
        dc = [(d[0], d[2], d[3]) for d in dets if d[1] == c]
        gc = [(g[0], g[2]) for g in gts if g[1] == c]
        total += ap_exhaustive(dc, gc)
    return total / n_classes
