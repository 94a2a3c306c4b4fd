"""Anchor distances and anchor boxes from clustering.

Object distances are clustered by 1-D k-means in a configurable space
(identity, log, or square); each cluster center becomes one predictor's
anchor distance.  2D boxes can be clustered by IoU for the conventional
anchor-box baseline.  Each distance cluster also gets an IoU-weighted
average box so box regression keeps a sensible prior.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ParseError
from .geometry import distance_of


class DistanceFormat(enum.Enum):
    NORMAL = "normal"
    LOG = "log"
    SQUARED = "squared"

    def transform(self, d):
        d = np.asarray(d, dtype=float)
        if self is DistanceFormat.NORMAL:
            return d
        if self is DistanceFormat.LOG:
            return np.log(d)
        return d * d

    def inverse(self, t):
        t = np.asarray(t, dtype=float)
        if self is DistanceFormat.NORMAL:
            return t
        if self is DistanceFormat.LOG:
            return np.exp(t)
        return np.sqrt(t)

    @classmethod
    def parse(cls, name: str) -> "DistanceFormat":
        key = name.strip().lower()
        aliases = {"normal": cls.NORMAL, "log": cls.LOG, "log-scale": cls.LOG,
                   "logscale": cls.LOG, "squared": cls.SQUARED, "square": cls.SQUARED}
        if key not in aliases:
            raise DomainError(f"unknown distance format {name!r}")
        return aliases[key]


@dataclass(frozen=True)
class AnchorSet:
    """k anchor distances (meters, ascending) with index-aligned average
    boxes (height, width in pixels).

    `distance_prior=False` marks a set whose anchors are all 1.0, i.e.
    the raw-exp baseline with no distance prior; the ascending constraint
    is waived for that case only.
    """

    format: DistanceFormat
    anchors: tuple
    avg_boxes: tuple | None = None
    distance_prior: bool = True

    def __post_init__(self):
        if len(self.anchors) < 1:
            raise DomainError("anchor set needs k >= 1 anchors")
        if any(a <= 0 for a in self.anchors):
            raise DomainError(f"anchors must be positive: {self.anchors}")
        if self.distance_prior:
            for lo, hi in zip(self.anchors, self.anchors[1:]):
                if hi <= lo:
                    raise DomainError(f"anchors must be strictly ascending: {self.anchors}")
        if self.avg_boxes is not None:
            if len(self.avg_boxes) != len(self.anchors):
                raise DomainError("avg_boxes must align with anchors")
            if any(h <= 0 or w <= 0 for h, w in self.avg_boxes):
                raise DomainError(f"avg_boxes must be positive: {self.avg_boxes}")

    @property
    def k(self) -> int:
        return len(self.anchors)

    def anchor_array(self) -> np.ndarray:
        return np.asarray(self.anchors, dtype=float)

    def transformed_anchors(self) -> np.ndarray:
        return self.format.transform(self.anchor_array())

    def box_array(self) -> np.ndarray:
        if self.avg_boxes is None:
            raise DomainError("anchor set has no average boxes")
        return np.asarray(self.avg_boxes, dtype=float)

    @classmethod
    def without_distance_prior(cls, avg_boxes) -> "AnchorSet":
        return cls(
            format=DistanceFormat.NORMAL,
            anchors=(1.0,) * len(avg_boxes),
            avg_boxes=tuple(avg_boxes),
            distance_prior=False,
        )


# ---------------------------------------------------------------------------
# 1-D k-means (Lloyd + k-means++ restarts)


def _kmeanspp_init_1d(vals: np.ndarray, k: int, rng) -> np.ndarray:
    centers = np.empty(k)
    centers[0] = vals[rng.integers(len(vals))]
    d2 = (vals - centers[0]) ** 2
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[j] = vals[rng.integers(len(vals))]
            continue
        idx = rng.choice(len(vals), p=d2 / total)
        centers[j] = vals[idx]
        d2 = np.minimum(d2, (vals - centers[j]) ** 2)
    return centers


def _repair_empty(residual_of, labels, k, member_counts):
    """Re-seed each empty cluster with the point farthest from its own
    centroid, never stealing the same point twice or draining a
    singleton cluster while an alternative exists."""
    moved = set()
    for j in range(k):
        if member_counts[j] > 0:
            continue
        residual = residual_of(labels)
        order = [int(i) for i in np.argsort(-residual, kind="stable") if int(i) not in moved]
        pick = next((i for i in order if member_counts[labels[i]] > 1), None)
        if pick is None:
            pick = order[0]
        labels[pick] = j
        member_counts = np.bincount(labels, minlength=k)
        moved.add(pick)
    return labels


def _lloyd_1d(vals: np.ndarray, centers: np.ndarray, max_iter: int = 100):
    k = len(centers)
    labels = None
    for _ in range(max_iter):
        dist = np.abs(vals[:, None] - centers[None, :])
        new_labels = np.argmin(dist, axis=1)
        counts = np.bincount(new_labels, minlength=k)
        if np.any(counts == 0):
            new_labels = _repair_empty(
                lambda lab: np.abs(vals - centers[lab]), new_labels, k, counts
            )
        for j in range(k):
            member = vals[new_labels == j]
            if len(member):
                centers[j] = member.mean()
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return centers, labels


def _polish_boundaries(bounds, run_cost, n, k):
    """Optimally reposition each split between adjacent runs until no
    single boundary move lowers the within-cluster sum of squares."""
    improved = True
    while improved:
        improved = False
        for b in range(k - 1):
            lo = bounds[b - 1] if b > 0 else 0
            hi = bounds[b + 1]
            best_mid, best_cost = bounds[b], run_cost(lo, bounds[b]) + run_cost(bounds[b], hi)
            for mid in range(lo + 1, hi):
                cost = run_cost(lo, mid) + run_cost(mid, hi)
                if cost < best_cost - 1e-12:
                    best_mid, best_cost = mid, cost
            if best_mid != bounds[b]:
                bounds[b] = best_mid
                improved = True
    return bounds


def _kmeans_1d(vals: np.ndarray, k: int, seed, restarts: int):
    """Best-of-restarts 1-D k-means; ties keep the earliest restart.

    Each restart runs k-means++ seeding, Lloyd iterations, and a
    boundary polish on the sorted data (1-D clusters are contiguous
    runs, so split positions can be optimized directly).
    """
    n = len(vals)
    order = np.argsort(vals, kind="stable")
    sv = vals[order]
    s1 = np.concatenate([[0.0], np.cumsum(sv)])
    s2 = np.concatenate([[0.0], np.cumsum(sv * sv)])

    def run_cost(i, j):
        s = s1[j] - s1[i]
        return (s2[j] - s2[i]) - s * s / (j - i)

    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centers = _kmeanspp_init_1d(sv, k, rng)
        centers, labels = _lloyd_1d(sv, centers)
        corder = np.argsort(centers, kind="stable")
        sizes = np.array([np.sum(labels == j) for j in corder])
        bounds = list(np.cumsum(sizes))
        bounds = _polish_boundaries(bounds, run_cost, n, k)
        wcss = float(sum(run_cost(i, j) for i, j in zip([0] + bounds[:-1], bounds)))
        if best is None or wcss < best[0]:
            best = (wcss, list(bounds))

    wcss, bounds = best
    centers = np.empty(k)
    labels_sorted = np.empty(n, dtype=int)
    start = 0
    for j, end in enumerate(bounds):
        labels_sorted[start:end] = j
        centers[j] = sv[start:end].mean()
        start = end
    labels = np.empty(n, dtype=int)
    labels[order] = labels_sorted
    return centers, labels, wcss


def kmeans_distances(
    distances,
    k: int,
    format: DistanceFormat = DistanceFormat.NORMAL,
    seed: int = 0,
    restarts: int = 25,
) -> AnchorSet:
    """Cluster distances in the chosen format; centers become anchors.

    Clustering runs in transformed space; anchors are the centers mapped
    back to meters, sorted ascending.
    """
    d = np.asarray(list(distances), dtype=float)
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if len(d) < k:
        raise DomainError(f"need at least k={k} distances, got {len(d)}")
    if np.any(d <= 0):
        raise DomainError("distances must be positive")
    centers, _, _ = _kmeans_1d(format.transform(d), k, seed, restarts)
    anchors = tuple(float(a) for a in format.inverse(np.sort(centers)))
    return AnchorSet(format=format, anchors=anchors)


def distance_cluster_members(distances, k, format, seed=0, restarts=25):
    """Cluster memberships, ordered by ascending center.

    Returns (anchors, member index lists) with anchors in meters.
    """
    d = np.asarray(list(distances), dtype=float)
    if len(d) < k:
        raise DomainError(f"need at least k={k} distances, got {len(d)}")
    if np.any(d <= 0):
        raise DomainError("distances must be positive")
    centers, labels, _ = _kmeans_1d(format.transform(d), k, seed, restarts)
    order = np.argsort(centers)
    anchors = [float(a) for a in format.inverse(centers[order])]
    members = [np.flatnonzero(labels == j) for j in order]
    return anchors, members


# ---------------------------------------------------------------------------
# IoU k-means over box dimensions


def centered_iou(hw_a, hw_b) -> np.ndarray:
    """IoU of center-aligned boxes given as (h, w); broadcasts."""
    ha, wa = np.asarray(hw_a, dtype=float).reshape(-1, 2).T
    hb, wb = np.asarray(hw_b, dtype=float).reshape(-1, 2).T
    inter = np.minimum(ha[:, None], hb[None, :]) * np.minimum(wa[:, None], wb[None, :])
    union = (ha * wa)[:, None] + (hb * wb)[None, :] - inter
    return inter / union


def _box_kmeans(hw: np.ndarray, k: int, seed, restarts: int):
    """k-means with 1 - IoU distance; centroids are per-cluster mean h, w."""
    n = len(hw)
    best = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, 1_000_000 + r])
        centers = np.empty((k, 2))
        centers[0] = hw[rng.integers(n)]
        d = 1.0 - centered_iou(hw, centers[:1])[:, 0]
        for j in range(1, k):
            wsum = (d * d).sum()
            if wsum <= 0:
                centers[j] = hw[rng.integers(n)]
                continue
            idx = rng.choice(n, p=d * d / wsum)
            centers[j] = hw[idx]
            d = np.minimum(d, 1.0 - centered_iou(hw, centers[j : j + 1])[:, 0])

        labels = None
        for _ in range(200):
            dist = 1.0 - centered_iou(hw, centers)
            new_labels = np.argmin(dist, axis=1)
            counts = np.bincount(new_labels, minlength=k)
            if np.any(counts == 0):
                new_labels = _repair_empty(
                    lambda lab: dist[np.arange(n), lab], new_labels, k, counts
                )
            for j in range(k):
                member = hw[new_labels == j]
                if len(member):
                    centers[j] = member.mean(axis=0)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
        cost = float(np.sum(1.0 - centered_iou(hw, centers)[np.arange(n), labels]))
        if best is None or cost < best[2]:
            best = (centers, labels, cost)
    return best


def kmeans_boxes_iou(boxes, k: int, seed: int = 0, restarts: int = 25):
    """Anchor boxes from IoU clustering, sorted by area ascending."""
    hw = np.asarray(list(boxes), dtype=float)
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if len(hw) < k:
        raise DomainError(f"need at least k={k} boxes, got {len(hw)}")
    if np.any(hw <= 0):
        raise DomainError("box dimensions must be positive")
    centers, _, _ = _box_kmeans(hw, k, seed, restarts)
    order = np.argsort(centers[:, 0] * centers[:, 1])
    return [tuple(map(float, centers[j])) for j in order]


def box_cluster_members(boxes, k, seed=0, restarts=25):
    """IoU-cluster memberships with centroid boxes, area descending.

    Area-descending order pairs naturally with ascending distance: the
    biggest boxes belong to the nearest objects.
    """
    hw = np.asarray(list(boxes), dtype=float)
    if len(hw) < k:
        raise DomainError(f"need at least k={k} boxes, got {len(hw)}")
    if np.any(hw <= 0):
        raise DomainError("box dimensions must be positive")
    centers, labels, _ = _box_kmeans(hw, k, seed, restarts)
    order = np.argsort(-(centers[:, 0] * centers[:, 1]))
    boxes_sorted = [tuple(map(float, centers[j])) for j in order]
    members = [np.flatnonzero(labels == j) for j in order]
    return boxes_sorted, members


# ---------------------------------------------------------------------------
# Cluster summaries


def average_distance(cluster) -> float:
    """Arithmetic mean distance of a cluster."""
    vals = np.asarray(list(cluster), dtype=float)
    if len(vals) == 0:
        raise DomainError("empty cluster")
    return float(vals.mean())


def average_bbox(cluster) -> tuple[float, float]:
    """IoU-motivated average box of (h, w) members.

    The squared height is the width-weighted mean of squared heights and
    vice versa, which minimizes IoU differences rather than dimension
    differences within the cluster.
    """
    hw = np.asarray(list(cluster), dtype=float).reshape(-1, 2)
    if len(hw) == 0:
        raise DomainError("empty cluster")
    if np.any(hw <= 0):
        raise DomainError("box dimensions must be positive")
    h, w = hw[:, 0], hw[:, 1]
    hm = float(np.sqrt(np.sum(w * h * h) / np.sum(w)))
    wm = float(np.sqrt(np.sum(h * w * w) / np.sum(h)))
    return (hm, wm)


@dataclass(frozen=True)
class ClusterStats:
    count: int
    mean_distance: float
    variance: float


@dataclass(frozen=True)
class ClusterReport:
    grouping: str
    k: int
    format: DistanceFormat
    clusters: tuple


def cluster_variance_report(
    labels,
    k: int,
    grouping: str = "distance",
    format: DistanceFormat = DistanceFormat.NORMAL,
    seed: int = 0,
    restarts: int = 25,
) -> ClusterReport:
    """Per-cluster count/mean/variance of raw distances in meters^2.

    grouping "distance" clusters the distances themselves (in `format`),
    "bbox" clusters 2D box dimensions by IoU.  Variance is population
    variance over untransformed distances; clusters are ordered by mean
    distance ascending.
    """
    labels = list(labels)
    if len(labels) < k:
        raise DomainError(f"need at least k={k} labels, got {len(labels)}")
    dists = np.array([distance_of(o.location) for o in labels])
    if grouping == "distance":
        _, members = distance_cluster_members(dists, k, format, seed, restarts)
    elif grouping == "bbox":
        hw = [(o.bbox.height, o.bbox.width) for o in labels]
        _, members = box_cluster_members(hw, k, seed, restarts)
    else:
        raise DomainError(f"unknown grouping {grouping!r}")
    stats = []
    for idx in members:
        vals = dists[idx]
        stats.append(ClusterStats(len(vals), float(vals.mean()), float(vals.var())))
    stats.sort(key=lambda s: s.mean_distance)
    return ClusterReport(grouping=grouping, k=k, format=format, clusters=tuple(stats))


# ---------------------------------------------------------------------------
# Anchor sets from labels


def _label_arrays(labels):
    labels = list(labels)
    dists = np.array([distance_of(o.location) for o in labels])
    hw = np.array([(o.bbox.height, o.bbox.width) for o in labels])
    return dists, hw


def build_distance_anchor_set(
    labels, k, format=DistanceFormat.SQUARED, seed=0, restarts=25
) -> AnchorSet:
    """Distance-clustered anchors plus per-cluster average boxes."""
    dists, hw = _label_arrays(labels)
    anchors, members = distance_cluster_members(dists, k, format, seed, restarts)
    avg_boxes = tuple(average_bbox(hw[idx]) for idx in members)
    return AnchorSet(format=format, anchors=tuple(anchors), avg_boxes=avg_boxes)


def build_bbox_anchor_set(labels, k, seed=0, restarts=25, distance_prior=True) -> AnchorSet:
    """Conventional anchor boxes with per-group mean distances.

    With distance_prior the anchors are the arithmetic-mean distances of
    the IoU groups (index-aligned with their anchor boxes); without it
    the anchors degrade to 1.0 so the distance head runs bare.
    """
    dists, hw = _label_arrays(labels)
    boxes, members = box_cluster_members(hw, k, seed, restarts)
    pairs = [(average_distance(dists[idx]), box) for idx, box in zip(members, boxes)]
    pairs.sort(key=lambda p: p[0])
    avg_boxes = tuple(box for _, box in pairs)
    if not distance_prior:
        return AnchorSet.without_distance_prior(avg_boxes)
    anchors = tuple(d for d, _ in pairs)
    return AnchorSet(format=DistanceFormat.NORMAL, anchors=anchors, avg_boxes=avg_boxes)


# ---------------------------------------------------------------------------
# Anchor file format (plain text, consumed by the trainer and CLI)


def format_anchor_file(aset: AnchorSet) -> str:
    lines = [
        "# anchordist anchor set",
        f"format {aset.format.value}",
        f"k {aset.k}",
        f"prior {1 if aset.distance_prior else 0}",
        "# distance_m avg_box_h avg_box_w",
    ]
    boxes = aset.avg_boxes if aset.avg_boxes is not None else ((0, 0),) * aset.k
    for a, (h, w) in zip(aset.anchors, boxes):
        lines.append(f"{a:.9g} {h:.9g} {w:.9g}")
    return "\n".join(lines) + "\n"


def parse_anchor_file(text: str) -> AnchorSet:
    fmt = None
    k = None
    prior = True
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        parts = body.split()
        if parts[0] == "format":
            fmt = DistanceFormat.parse(parts[1])
        elif parts[0] == "k":
            k = int(parts[1])
        elif parts[0] == "prior":
            prior = parts[1] != "0"
        else:
            if len(parts) != 3:
                raise ParseError(f"expected 'distance h w', got {body!r}", line=lineno)
            rows.append(tuple(float(p) for p in parts))
    if fmt is None or k is None:
        raise ParseError("anchor file missing format/k header")
    if len(rows) != k:
        raise ParseError(f"expected {k} anchor rows, got {len(rows)}")
    anchors = tuple(r[0] for r in rows)
    boxes = tuple((r[1], r[2]) for r in rows)
    if not prior:
        return AnchorSet.without_distance_prior(boxes)
    return AnchorSet(format=fmt, anchors=anchors, avg_boxes=boxes)
