"""Independent brute-force reference implementations used as test oracles.

These deliberately avoid the library code paths they check: pure-python loops
and sort-and-index statistics.
"""

from __future__ import annotations

import math


def brute_force_quad(pred, gt):
    """Pixel-loop dice/precision/recall/f1 with the documented conventions."""
    tp = fp = fn = 0
    for prow, grow in zip(pred.tolist(), gt.tolist()):
        for p, g in zip(prow, grow):
            if p and g:
                tp += 1
            elif p:
                fp += 1
            elif g:
                fn += 1
    pred_any = tp + fp > 0
    gt_any = tp + fn > 0
    if not pred_any and not gt_any:
        return (1.0, 1.0, 1.0, 1.0)
    if not pred_any or not gt_any:
        return (0.0, 0.0, 0.0, 0.0)
    dice = 2.0 * tp / (2.0 * tp + fp + fn)
    return (dice, tp / (tp + fp), tp / (tp + fn), dice)


def brute_force_components(mask, min_area):
    """8-connected component boxes via BFS; returns sorted (x0, y0, x1, y1)."""
    h = len(mask)
    w = len(mask[0]) if h else 0
    seen = [[False] * w for _ in range(h)]
    boxes = []
    for sy in range(h):
        for sx in range(w):
            if not mask[sy][sx] or seen[sy][sx]:
                continue
            stack = [(sy, sx)]
            seen[sy][sx] = True
            xs, ys, area = [sx, sx], [sy, sy], 0
            while stack:
                y, x = stack.pop()
                area += 1
                xs[0], xs[1] = min(xs[0], x), max(xs[1], x)
                ys[0], ys[1] = min(ys[0], y), max(ys[1], y)
                for dy in (-1, 0, 1):
                    for dx in (-1, 0, 1):
                        ny, nx = y + dy, x + dx
                        if 0 <= ny < h and 0 <= nx < w and mask[ny][nx] and not seen[ny][nx]:
                            seen[ny][nx] = True
                            stack.append((ny, nx))
            if area >= min_area:
                boxes.append((xs[0], ys[0], xs[1] + 1, ys[1] + 1))
    boxes.sort(key=lambda b: (b[1], b[0]))
    return boxes


def quartile_linear(sorted_values, p):
    """Linear interpolation at position (n-1)*p over a pre-sorted list."""
    n = len(sorted_values)
    pos = (n - 1) * p
    lo = math.floor(pos)
    hi = math.ceil(pos)
    if lo == hi:
        return float(sorted_values[lo])
    frac = pos - lo
    return float(sorted_values[lo] * (1 - frac) + sorted_values[hi] * frac)


def reference_summary(values):
    """Sort-and-index mean/median/std/quartiles/whiskers/outliers."""
    data = sorted(float(v) for v in values)
    n = len(data)
    mean = sum(data) / n
    std = math.sqrt(sum((v - mean) ** 2 for v in data) / (n - 1)) if n > 1 else 0.0
    median = quartile_linear(data, 0.5)
    q1 = quartile_linear(data, 0.25)
    q3 = quartile_linear(data, 0.75)
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = [v for v in data if lo_fence <= v <= hi_fence]
    outliers = [v for v in data if v < lo_fence or v > hi_fence]
    return {
        "mean": mean,
        "median": median,
        "std": std,
        "q1": q1,
        "q3": q3,
        "whisker_lo": min(inside[0], q1),
        "whisker_hi": max(inside[-1], q3),
        "outliers": outliers,
        "n": n,
    }


def reference_nms(boxes_scores, iou_thresh):
    """O(n^2) greedy suppression over (x0, y0, x1, y1, score) tuples.

    Same ordering rules as the engine: descending score, ties by input index.
    Returns kept input indices.
    """

    def area(b):
        return max(0.0, b[2] - b[0]) * max(0.0, b[3] - b[1])

    def pair_iou(a, b):
        ix = max(0.0, min(a[2], b[2]) - max(a[0], b[0]))
        iy = max(0.0, min(a[3], b[3]) - max(a[1], b[1]))
        inter = ix * iy
        if inter <= 0:
            return 0.0
        return inter / (area(a) + area(b) - inter)

    order = sorted(range(len(boxes_scores)), key=lambda i: (-boxes_scores[i][4], i))
    kept: list[int] = []
    for i in order:
        ok = True
        for j in kept:
            if pair_iou(boxes_scores[i], boxes_scores[j]) >= iou_thresh:
                ok = False
                break
        if ok:
            kept.append(i)
    return kept
