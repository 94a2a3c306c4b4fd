"""Depth evaluation metrics and distance-binned error analysis.

The six depth statistics follow the standard monocular evaluation
protocol: ratio-threshold accuracies (strict <), absolute and squared
relative errors, RMSE, and log RMSE, all over matched prediction and
ground-truth depths.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError
from .geometry import locate_object, pixel_to_ray
from .head import GridSpec, responsible_cell


@dataclass(frozen=True)
class DepthMetrics:
    delta1: float
    delta2: float
    abs_rel: float
    sqr_rel: float
    rmse: float
    rmse_log: float


def compute_depth_metrics(pred_z, gt_z) -> DepthMetrics:
    """Six-quantity depth evaluation over matched pairs.

    delta1/delta2 count ratios max(pred/gt, gt/pred) strictly below
    1.25 and 1.25^2.
    """
    pred = np.asarray(list(pred_z), dtype=float)
    gt = np.asarray(list(gt_z), dtype=float)
    if pred.shape != gt.shape or pred.ndim != 1 or len(pred) < 1:
        raise DomainError(f"need equal-length nonempty depth lists, got {pred.shape} vs {gt.shape}")
    if np.any(pred <= 0) or np.any(gt <= 0):
        raise DomainError("depths must be positive")
    ratio = np.maximum(pred / gt, gt / pred)
    diff = pred - gt
    return DepthMetrics(
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25**2)),
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sqr_rel=float(np.mean(diff**2 / gt)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(pred) - np.log(gt)) ** 2))),
    )


@dataclass(frozen=True)
class ErrorBins:
    """Mean |error| per ground-truth-distance bin; NaN marks empty bins."""

    edges: np.ndarray
    counts: np.ndarray
    mean_abs_x: np.ndarray
    mean_abs_z: np.ndarray

    def bin_of(self, distance: float) -> int:
        idx = int(np.searchsorted(self.edges, distance, side="right")) - 1
        if idx < 0 or idx >= len(self.counts):
            raise DomainError(f"distance {distance} outside binned range")
        return idx


def bin_errors_by_distance(pred_locations, gt_locations, edges=None) -> ErrorBins:
    """Bin matched 3D pairs by ground-truth distance from the origin.

    Bins are half-open [edges[i], edges[i+1]); pairs outside the edges
    are dropped.  Empty bins report NaN means rather than zero.
    """
    if edges is None:
        edges = np.arange(0.0, 85.0, 5.0)
    edges = np.asarray(edges, dtype=float)
    pred = np.asarray(pred_locations, dtype=float).reshape(-1, 3)
    gt = np.asarray(gt_locations, dtype=float).reshape(-1, 3)
    if pred.shape != gt.shape:
        raise DomainError("prediction/ground-truth location counts differ")
    n_bins = len(edges) - 1
    counts = np.zeros(n_bins, dtype=int)
    sum_x = np.zeros(n_bins)
    sum_z = np.zeros(n_bins)
    gt_dist = np.linalg.norm(gt, axis=1)
    which = np.searchsorted(edges, gt_dist, side="right") - 1
    for i, b in enumerate(which):
        if b < 0 or b >= n_bins:
            continue
        counts[b] += 1
        sum_x[b] += abs(pred[i, 0] - gt[i, 0])
        sum_z[b] += abs(pred[i, 2] - gt[i, 2])
    with np.errstate(invalid="ignore"):
        mean_x = np.where(counts > 0, sum_x / np.maximum(counts, 1), np.nan)
        mean_z = np.where(counts > 0, sum_z / np.maximum(counts, 1), np.nan)
    return ErrorBins(edges=edges, counts=counts, mean_abs_x=mean_x, mean_abs_z=mean_z)


def select_prediction_for_gt(decoded, gt, anchors, grid: GridSpec, intrinsics):
    """Pick the predictor in the ground truth's responsible cell whose
    back-projected location lands closest to the ground truth.

    Returns (col, row, predictor, location) or None when the ground
    truth's box center falls outside the image.
    """
    cx, cy = gt.bbox.center
    w, h = grid.image_size
    if not (0.0 <= cx <= w and 0.0 <= cy <= h):
        return None
    col, row = responsible_cell((cx, cy), grid)
    best = None
    gt_loc = np.asarray(gt.location, dtype=float)
    for p in range(grid.k):
        u, v = decoded.center_at(col, row, p)
        ray = pixel_to_ray(intrinsics, u, v)
        loc = np.asarray(locate_object(ray, float(decoded.distances[row, col, p])))
        err = float(np.linalg.norm(loc - gt_loc))
        if best is None or err < best[0]:
            best = (err, p, loc)
    _, p, loc = best
    return (col, row, p, tuple(float(c) for c in loc))


def extract_predictions(decoded, scene, anchors, grid: GridSpec):
    """Matched (gt object, predicted location) pairs for one scene.

    Objects whose box center is outside the image are skipped and
    returned separately.
    """
    pairs = []
    skipped = []
    for obj in scene.objects:
        sel = select_prediction_for_gt(decoded, obj, anchors, grid, scene.intrinsics)
        if sel is None:
            skipped.append(obj)
        else:
            pairs.append((obj, sel[3]))
    return pairs, skipped


_METRIC_COLUMNS = ("d<1.25", "d<1.25^2", "AbsRel", "SqrRel", "RMSE", "RMSElog")


def format_metrics_table(rows) -> str:
    """Plain-text table; rows are (name, DepthMetrics) pairs."""
    name_w = max([len(name) for name, _ in rows] + [6])
    header = "method".ljust(name_w) + "".join(f"{c:>12}" for c in _METRIC_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, m in rows:
        vals = (m.delta1, m.delta2, m.abs_rel, m.sqr_rel, m.rmse, m.rmse_log)
        lines.append(name.ljust(name_w) + "".join(f"{v:>12.4f}" for v in vals))
    return "\n".join(lines) + "\n"
