"""Independent reference implementations used only by the tests.

Everything here is deliberately written from first principles (brute
force, dynamic programming, per-element loops) and never calls the
library code it is checking.
"""

import itertools
import math

import numpy as np


def dp_kmeans_1d(values, k):
    """Exact optimal 1-D k-means via dynamic programming.

    Optimal 1-D clusters are contiguous runs of the sorted data, so a
    DP over (prefix length, cluster count) finds the global minimum
    within-cluster sum of squares.  Returns (wcss, sorted centers).
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    s1 = np.concatenate([[0.0], np.cumsum(x)])
    s2 = np.concatenate([[0.0], np.cumsum(x * x)])

    def seg_cost(i, j):
        # cost of x[i:j] as one cluster (j exclusive)
        m = j - i
        s = s1[j] - s1[i]
        return (s2[j] - s2[i]) - s * s / m

    INF = float("inf")
    cost = np.full((k + 1, n + 1), INF)
    split = np.zeros((k + 1, n + 1), dtype=int)
    cost[0, 0] = 0.0
    for c in range(1, k + 1):
        for j in range(c, n + 1):
            best, arg = INF, c - 1
            for i in range(c - 1, j):
                cand = cost[c - 1, i] + seg_cost(i, j)
                if cand < best:
                    best, arg = cand, i
            cost[c, j] = best
            split[c, j] = arg
    centers = []
    j = n
    for c in range(k, 0, -1):
        i = split[c, j]
        centers.append(x[i:j].mean())
        j = i
    return float(cost[k, n]), sorted(centers)


def brute_force_partition_1d(values, k):
    """Global optimum by enumerating every assignment (tiny n only)."""
    vals = list(values)
    best = (float("inf"), None)
    for assign in itertools.product(range(k), repeat=len(vals)):
        if len(set(assign)) != k:
            continue
        total = 0.0
        centers = []
        for c in range(k):
            member = [v for v, a in zip(vals, assign) if a == c]
            mu = sum(member) / len(member)
            centers.append(mu)
            total += sum((v - mu) ** 2 for v in member)
        if total < best[0]:
            best = (total, sorted(centers))
    return best


def brute_force_box_partition(boxes, k):
    """Minimum total 1-IoU partition of (h, w) boxes by enumeration."""

    def iou_centered(a, b):
        inter = min(a[0], b[0]) * min(a[1], b[1])
        return inter / (a[0] * a[1] + b[0] * b[1] - inter)

    best = (float("inf"), None)
    boxes = list(boxes)
    for assign in itertools.product(range(k), repeat=len(boxes)):
        if len(set(assign)) != k:
            continue
        total = 0.0
        centers = []
        for c in range(k):
            member = [b for b, a in zip(boxes, assign) if a == c]
            mu = (
                sum(b[0] for b in member) / len(member),
                sum(b[1] for b in member) / len(member),
            )
            centers.append(mu)
            total += sum(1.0 - iou_centered(b, mu) for b in member)
        if total < best[0]:
            best = (total, sorted(centers, key=lambda hw: hw[0] * hw[1]))
    return best


def naive_depth_metrics(pred, gt):
    """Per-element recomputation of the six depth statistics."""
    n = len(pred)
    d1 = d2 = 0
    abs_rel = sqr_rel = mse = mse_log = 0.0
    for p, g in zip(pred, gt):
        ratio = max(p / g, g / p)
        d1 += 1 if ratio < 1.25 else 0
        d2 += 1 if ratio < 1.25**2 else 0
        abs_rel += abs(p - g) / g
        sqr_rel += (p - g) ** 2 / g
        mse += (p - g) ** 2
        mse_log += (math.log(p) - math.log(g)) ** 2
    return (
        d1 / n,
        d2 / n,
        abs_rel / n,
        sqr_rel / n,
        math.sqrt(mse / n),
        math.sqrt(mse_log / n),
    )


def project_corner(intr, corner):
    """Scalar pinhole projection written independently."""
    x, y, z = corner
    return (intr.fx * x / z + intr.cx, intr.fy * y / z + intr.cy)


def yawed_corners(location, dims, yaw):
    """All 8 corners of a yawed box, no vectorization."""
    cx, cy, cz = location
    h, w, l = dims
    out = []
    for sx in (-0.5, 0.5):
        for sy in (-0.5, 0.5):
            for sz in (-0.5, 0.5):
                dx, dy, dz = sx * l, sy * h, sz * w
                rx = math.cos(yaw) * dx + math.sin(yaw) * dz
                rz = -math.sin(yaw) * dx + math.cos(yaw) * dz
                out.append((cx + rx, cy + dy, cz + rz))
    return out


def painter_image(objects_with_intensity, canvas_size):
    """Per-pixel painter's algorithm with analytic pixel coverage.

    objects_with_intensity: list of (left, top, right, bottom, z,
    intensity) in canvas coordinates; farther boxes are painted first.
    """
    cw, ch = canvas_size
    img = [[0.0] * cw for _ in range(ch)]
    for left, top, right, bottom, _z, val in sorted(
        objects_with_intensity, key=lambda t: -t[4]
    ):
        for yy in range(ch):
            cov_y = min(bottom, yy + 1) - max(top, yy)
            if cov_y <= 0:
                continue
            cov_y = min(cov_y, 1.0)
            for xx in range(cw):
                cov_x = min(right, xx + 1) - max(left, xx)
                if cov_x <= 0:
                    continue
                cov_x = min(cov_x, 1.0)
                a = cov_x * cov_y
                img[yy][xx] = img[yy][xx] * (1 - a) + val * a
    return np.asarray(img)


def central_difference(f, x, h=1e-5):
    """Gradient of scalar f at vector x by central differences."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp.flat[i] += h
        xm.flat[i] -= h
        g.flat[i] = (f(xp) - f(xm)) / (2 * h)
    return g
