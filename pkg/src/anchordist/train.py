"""Desk-scale trainer demonstrating predictor specialization.

A small shared-weight model maps each grid cell's image patch through
one hidden layer to k predictors of five logits.  Scenes are rendered
to a letterboxed square canvas, objects are assigned to (cell,
predictor) slots by their anchor (never by the current estimate), and
the slot losses are backpropagated with adaptive-moment updates.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .anchors import (
    AnchorSet,
    DistanceFormat,
    build_bbox_anchor_set,
    build_distance_anchor_set,
    parse_anchor_file,
)
from .data import Scene, letterbox_scene, render_scene, usable_objects
from .errors import ConfigError, DomainError, ParseError
from .geometry import distance_of
from .head import GridSpec, N_CHANNELS, assign_all, decode
from .losses import loss_and_grad
from .metrics import DepthMetrics, ErrorBins, bin_errors_by_distance, compute_depth_metrics, extract_predictions

VARIANTS = ("anchor-distance", "bbox-avgdist", "bbox-noprior")


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    lr: float = 1e-4
    lam: float = 0.1
    seed: int = 0
    k: int = 5
    format: str = "squared"
    stride: int = 32
    resolution: int = 416
    hidden: int = 64
    assignment: str = "distance"

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.k, self.stride, self.resolution, self.hidden) <= 0:
            raise ConfigError("config sizes must be positive")
        if self.lr <= 0 or self.lam < 0:
            raise ConfigError("bad lr/lam")
        if self.resolution % self.stride:
            raise ConfigError(f"resolution {self.resolution} not divisible by stride {self.stride}")
        if self.assignment not in ("distance", "bbox"):
            raise ConfigError(f"unknown assignment rule {self.assignment!r}")

    def grid(self) -> GridSpec:
        return GridSpec((self.resolution, self.resolution), self.stride, self.k)

    @property
    def patch_dim(self) -> int:
        return self.stride * self.stride


def build_variant_anchor_set(labels, variant: str, config: TrainConfig, restarts: int = 25) -> AnchorSet:
    """Anchor set for one of the trained method families."""
    if variant == "anchor-distance":
        fmt = DistanceFormat.parse(config.format)
        return build_distance_anchor_set(labels, config.k, fmt, config.seed, restarts)
    if variant == "bbox-avgdist":
        return build_bbox_anchor_set(labels, config.k, config.seed, restarts, distance_prior=True)
    if variant == "bbox-noprior":
        return build_bbox_anchor_set(labels, config.k, config.seed, restarts, distance_prior=False)
    raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


def assignment_rule_for_variant(variant: str) -> str:
    return "distance" if variant == "anchor-distance" else "bbox"


# ---------------------------------------------------------------------------
# Model


@dataclass
class TinyModel:
    """patch -> hidden (leaky rectifier, slope 0.1) -> k * 5 logits."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    slope: float = 0.1

    @classmethod
    def init(cls, patch_dim: int, hidden: int, k: int, seed: int = 0) -> "TinyModel":
        rng = np.random.default_rng([seed, 2654435769])
        s1 = 1.0 / np.sqrt(patch_dim)
        s2 = 1.0 / np.sqrt(hidden)
        return cls(
            w1=rng.uniform(-s1, s1, size=(hidden, patch_dim)),
            b1=rng.uniform(-s1, s1, size=hidden),
            w2=rng.uniform(-s2, s2, size=(k * N_CHANNELS, hidden)),
            b2=rng.uniform(-s2, s2, size=k * N_CHANNELS),
        )

    @classmethod
    def zeros(cls, patch_dim: int, hidden: int, k: int) -> "TinyModel":
        return cls(
            w1=np.zeros((hidden, patch_dim)),
            b1=np.zeros(hidden),
            w2=np.zeros((k * N_CHANNELS, hidden)),
            b2=np.zeros(k * N_CHANNELS),
        )

    @property
    def hidden(self) -> int:
        return len(self.b1)

    @property
    def k(self) -> int:
        return len(self.b2) // N_CHANNELS

    @property
    def patch_dim(self) -> int:
        return self.w1.shape[1]

    def params(self) -> list[np.ndarray]:
        return [self.w1, self.b1, self.w2, self.b2]


def extract_patches(image: np.ndarray, stride: int) -> np.ndarray:
    """Flattened stride x stride cell patches, row-major cell order."""
    h, w = image.shape
    rows, cols = h // stride, w // stride
    return (
        image.reshape(rows, stride, cols, stride)
        .transpose(0, 2, 1, 3)
        .reshape(rows * cols, stride * stride)
    )


def _forward_patches(model: TinyModel, patches: np.ndarray):
    z1 = patches @ model.w1.T + model.b1
    a1 = np.where(z1 > 0, z1, model.slope * z1)
    return a1 @ model.w2.T + model.b2, (z1, a1)


def forward(model: TinyModel, image: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Raw prediction grid (rows, cols, k, 5) for one rendered image."""
    rows, cols = grid.rows, grid.cols
    expected = (rows * grid.stride, cols * grid.stride)
    if image.shape != expected:
        raise DomainError(f"image shape {image.shape} != grid {expected}")
    if model.patch_dim != grid.stride**2 or model.k != grid.k:
        raise DomainError("model shape does not match grid")
    out, _ = _forward_patches(model, extract_patches(image, grid.stride))
    return out.reshape(rows, cols, grid.k, N_CHANNELS)


# ---------------------------------------------------------------------------
# Scene preparation


@dataclass
class PreparedScene:
    patches: np.ndarray
    # (col, row, predictor, target box, target distance)
    targets: list


def prepare_scene(scene: Scene, anchors: AnchorSet, config: TrainConfig,
                  categories=("Car",)) -> PreparedScene:
    grid = config.grid()
    boxed = letterbox_scene(scene, config.resolution)
    image = render_scene(boxed)
    objects = usable_objects(boxed, categories)
    assignment = assign_all(objects, anchors, grid, by=config.assignment)
    targets = []
    for i, (col, row, p) in sorted(assignment.slots.items()):
        obj = objects[i]
        targets.append((col, row, p, obj.bbox, distance_of(obj.location)))
    return PreparedScene(patches=extract_patches(image, config.stride), targets=targets)


# ---------------------------------------------------------------------------
# Loss + gradients over a batch


@dataclass
class BatchLoss:
    total: float
    ciou: float
    distance: float
    n_assigned: int


def _batch_eval(model, batch, anchors, grid, lam, with_grads):
    cells = grid.rows * grid.cols
    cols = grid.cols
    n_assigned = sum(len(ps.targets) for ps in batch)
    stats = BatchLoss(0.0, 0.0, 0.0, n_assigned)
    if n_assigned == 0:
        grads = [np.zeros_like(p) for p in model.params()] if with_grads else None
        return stats, grads

    live = [ps for ps in batch if ps.targets]
    patches = np.concatenate([ps.patches for ps in live], axis=0)
    out, (z1, a1) = _forward_patches(model, patches)
    d_out = np.zeros_like(out) if with_grads else None

    for s_idx, ps in enumerate(live):
        offset = s_idx * cells
        for col, row, p, box, dist in ps.targets:
            flat = offset + row * cols + col
            entry = out[flat, p * N_CHANNELS : (p + 1) * N_CHANNELS]
            lb = loss_and_grad(entry, box, dist, anchors, grid, col, row, p, lam)
            stats.total += lb.total
            stats.ciou += lb.ciou
            stats.distance += lb.distance
            if with_grads:
                d_out[flat, p * N_CHANNELS : (p + 1) * N_CHANNELS] += lb.total_grad / n_assigned

    stats.total /= n_assigned
    stats.ciou /= n_assigned
    stats.distance /= n_assigned
    if not with_grads:
        return stats, None

    gw2 = d_out.T @ a1
    gb2 = d_out.sum(axis=0)
    da1 = d_out @ model.w2
    dz1 = da1 * np.where(z1 > 0, 1.0, model.slope)
    gw1 = dz1.T @ patches
    gb1 = dz1.sum(axis=0)
    return stats, [gw1, gb1, gw2, gb2]


def batch_loss(model, scenes, anchors, config: TrainConfig, categories=("Car",)) -> BatchLoss:
    """Mean losses over the assigned objects of a batch of scenes."""
    prepared = [prepare_scene(s, anchors, config, categories) for s in scenes]
    stats, _ = _batch_eval(model, prepared, anchors, config.grid(), config.lam, with_grads=False)
    return stats


# ---------------------------------------------------------------------------
# Adaptive-moment updates

_BETA1, _BETA2, _ADAM_EPS = 0.9, 0.999, 1e-8


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_model(cls, model: TinyModel) -> "AdamState":
        return cls(
            m=[np.zeros_like(p) for p in model.params()],
            v=[np.zeros_like(p) for p in model.params()],
        )


def adam_update(model: TinyModel, grads, state: AdamState, lr: float):
    state.t += 1
    bc1 = 1.0 - _BETA1**state.t
    bc2 = 1.0 - _BETA2**state.t
    for p, g, m, v in zip(model.params(), grads, state.m, state.v):
        m *= _BETA1
        m += (1.0 - _BETA1) * g
        v *= _BETA2
        v += (1.0 - _BETA2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + _ADAM_EPS)


def backward_step(model, scenes, anchors, config: TrainConfig, adam: AdamState | None = None,
                  categories=("Car",)) -> BatchLoss:
    """One optimizer step on a batch of scenes; the model is updated in
    place and the pre-step mean losses are returned."""
    prepared = [prepare_scene(s, anchors, config, categories) for s in scenes]
    if adam is None:
        adam = AdamState.for_model(model)
    return _step(model, prepared, anchors, config, adam)


def _step(model, prepared, anchors, config, adam):
    stats, grads = _batch_eval(model, prepared, anchors, config.grid(), config.lam, with_grads=True)
    adam_update(model, grads, adam, config.lr)
    return stats


# ---------------------------------------------------------------------------
# Training loop


@dataclass
class EpochStats:
    epoch: int
    total: float
    ciou: float
    distance: float
    n_assigned: int
    predictor_counts: tuple


@dataclass
class TrainResult:
    model: TinyModel
    history: list
    anchors: AnchorSet
    config: TrainConfig


def train(scenes, anchors: AnchorSet, config: TrainConfig, categories=("Car",)) -> TrainResult:
    """Deterministic training over rendered scenes.

    History records per-epoch mean losses over assigned objects plus
    per-predictor assignment counts (fixed by the anchors, so constant
    across epochs).
    """
    if not scenes:
        raise ConfigError("empty training dataset")
    if anchors.k != config.k:
        raise ConfigError(f"anchor k={anchors.k} != config k={config.k}")
    prepared = [prepare_scene(s, anchors, config, categories) for s in scenes]
    counts = np.zeros(config.k, dtype=int)
    for ps in prepared:
        for _, _, p, _, _ in ps.targets:
            counts[p] += 1

    model = TinyModel.init(config.patch_dim, config.hidden, config.k, config.seed)
    adam = AdamState.for_model(model)
    order = np.arange(len(prepared))
    history = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 7919, epoch])
        rng.shuffle(order)
        total = ciou = dist = 0.0
        assigned = 0
        for start in range(0, len(order), config.batch_size):
            batch = [prepared[i] for i in order[start : start + config.batch_size]]
            stats = _step(model, batch, anchors, config, adam)
            total += stats.total * stats.n_assigned
            ciou += stats.ciou * stats.n_assigned
            dist += stats.distance * stats.n_assigned
            assigned += stats.n_assigned
        denom = max(assigned, 1)
        history.append(
            EpochStats(
                epoch=epoch,
                total=float(total / denom),
                ciou=float(ciou / denom),
                distance=float(dist / denom),
                n_assigned=assigned,
                predictor_counts=tuple(int(c) for c in counts),
            )
        )
    return TrainResult(model=model, history=history, anchors=anchors, config=config)


def history_to_csv(history) -> str:
    if not history:
        return "epoch,total,ciou,distance,n_assigned\n"
    k = len(history[0].predictor_counts)
    cols = ",".join(f"assigned_p{i}" for i in range(k))
    lines = [f"epoch,total,ciou,distance,n_assigned,{cols}"]
    for h in history:
        counts = ",".join(str(c) for c in h.predictor_counts)
        lines.append(f"{h.epoch},{h.total:.6f},{h.ciou:.6f},{h.distance:.6f},{h.n_assigned},{counts}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Evaluation


@dataclass
class EvalResult:
    metrics: DepthMetrics
    bins: ErrorBins
    pred_locations: np.ndarray
    gt_locations: np.ndarray
    n_skipped: int


def predict_scene(model, scene, anchors, config: TrainConfig):
    """(decoded prediction grid, letterboxed scene) for one scene."""
    boxed = letterbox_scene(scene, config.resolution)
    raw = forward(model, render_scene(boxed), config.grid())
    return decode(raw, anchors, config.grid()), boxed


def evaluate_model(model, scenes, anchors, config: TrainConfig, categories=("Car",),
                   bin_edges=None) -> EvalResult:
    """Depth metrics on the z coordinate plus binned |error| curves."""
    preds = []
    gts = []
    skipped = 0
    grid = config.grid()
    for scene in scenes:
        decoded, boxed = predict_scene(model, scene, anchors, config)
        boxed.objects = usable_objects(boxed, categories)
        pairs, missed = extract_predictions(decoded, boxed, anchors, grid)
        skipped += len(missed)
        for obj, loc in pairs:
            preds.append(loc)
            gts.append(obj.location)
    if not preds:
        raise DomainError("no evaluable objects in the scenes")
    preds = np.asarray(preds)
    gts = np.asarray(gts)
    return EvalResult(
        metrics=compute_depth_metrics(preds[:, 2], gts[:, 2]),
        bins=bin_errors_by_distance(preds, gts, bin_edges),
        pred_locations=preds,
        gt_locations=gts,
        n_skipped=skipped,
    )


@dataclass
class PredictorStats:
    predictor: int
    count: int
    assigned_mean: float
    assigned_var: float
    predicted_mean: float
    predicted_var: float


def specialization_report(model, scenes, anchors, config: TrainConfig,
                          categories=("Car",)) -> list[PredictorStats]:
    """Per-predictor spread of assigned vs predicted distances.

    Assignments use the anchor rule, so the assigned-side statistics
    depend only on the ground truth and the anchor set.
    """
    grid = config.grid()
    assigned = [[] for _ in range(config.k)]
    predicted = [[] for _ in range(config.k)]
    for scene in scenes:
        boxed = letterbox_scene(scene, config.resolution)
        objects = usable_objects(boxed, categories)
        assignment = assign_all(objects, anchors, grid, by=config.assignment)
        raw = forward(model, render_scene(boxed), grid)
        decoded = decode(raw, anchors, grid)
        for i, (col, row, p) in assignment.slots.items():
            assigned[p].append(distance_of(objects[i].location))
            predicted[p].append(float(decoded.distances[row, col, p]))
    rows = []
    for p in range(config.k):
        a = np.asarray(assigned[p])
        q = np.asarray(predicted[p])
        rows.append(
            PredictorStats(
                predictor=p,
                count=len(a),
                assigned_mean=float(a.mean()) if len(a) else float("nan"),
                assigned_var=float(a.var()) if len(a) else float("nan"),
                predicted_mean=float(q.mean()) if len(q) else float("nan"),
                predicted_var=float(q.var()) if len(q) else float("nan"),
            )
        )
    return rows


# ---------------------------------------------------------------------------
# Checkpoints (versioned text: scalars, anchor rows, shape-headed arrays)

_CKPT_MAGIC = "anchordist-checkpoint v1"


def format_checkpoint(model: TinyModel, anchors: AnchorSet, config: TrainConfig) -> str:
    lines = [
        _CKPT_MAGIC,
        f"stride {config.stride}",
        f"resolution {config.resolution}",
        f"hidden {config.hidden}",
        f"k {config.k}",
        f"assignment {config.assignment}",
        f"lam {config.lam!r}",
        f"format {anchors.format.value}",
        f"prior {1 if anchors.distance_prior else 0}",
    ]
    for a, (h, w) in zip(anchors.anchors, anchors.avg_boxes):
        lines.append(f"anchor {a!r} {h!r} {w!r}")
    for name, arr in zip(("w1", "b1", "w2", "b2"), model.params()):
        mat = np.atleast_2d(arr)
        lines.append(f"array {name} {mat.shape[0]} {mat.shape[1]}")
        for row in mat:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_checkpoint(text: str):
    lines = text.splitlines()
    if not lines or lines[0].strip() != _CKPT_MAGIC:
        raise ParseError("not an anchordist checkpoint")
    scalars = {}
    anchor_rows = []
    arrays = {}
    i = 1
    while i < len(lines):
        parts = lines[i].split()
        i += 1
        if not parts:
            continue
        if parts[0] == "anchor":
            anchor_rows.append(tuple(float(p) for p in parts[1:4]))
        elif parts[0] == "array":
            name, r, c = parts[1], int(parts[2]), int(parts[3])
            rows = []
            for _ in range(r):
                rows.append([float(v) for v in lines[i].split()])
                i += 1
            arrays[name] = np.asarray(rows).reshape(r, c)
        else:
            scalars[parts[0]] = parts[1]
    for key in ("stride", "resolution", "hidden", "k", "assignment", "format", "prior"):
        if key not in scalars:
            raise ParseError(f"checkpoint missing {key}")
    boxes = tuple((h, w) for _, h, w in anchor_rows)
    if scalars["prior"] == "0":
        anchors = AnchorSet.without_distance_prior(boxes)
    else:
        anchors = AnchorSet(
            format=DistanceFormat.parse(scalars["format"]),
            anchors=tuple(a for a, _, _ in anchor_rows),
            avg_boxes=boxes,
        )
    config = TrainConfig(
        stride=int(scalars["stride"]),
        resolution=int(scalars["resolution"]),
        hidden=int(scalars["hidden"]),
        k=int(scalars["k"]),
        assignment=scalars["assignment"],
        lam=float(scalars.get("lam", 0.1)),
        format=anchors.format.value,
    )
    model = TinyModel(
        w1=arrays["w1"],
        b1=arrays["b1"].ravel(),
        w2=arrays["w2"],
        b2=arrays["b2"].ravel(),
    )
    if model.patch_dim != config.patch_dim or model.k != config.k or model.hidden != config.hidden:
        raise ParseError("checkpoint arrays disagree with header")
    return model, anchors, config


def save_checkpoint(path, model, anchors, config):
    Path(path).write_text(format_checkpoint(model, anchors, config))


def load_checkpoint(path):
    return parse_checkpoint(Path(path).read_text())
