"""Grid-of-predictors encoding and target assignment.

Raw network output per (cell, predictor) is five logits laid out as
(center-x offset, center-y offset, height, width, distance).  Box
centers decode through a sigmoid to a cell-relative offset; heights,
widths, and distances decode as prior * exp(logit).  Serialization
order for flat dumps is (row, col, predictor, channel).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .anchors import AnchorSet, centered_iou
from .data import BBox2D
from .errors import DomainError
from .geometry import distance_of

# channel indices within a raw prediction entry
CH_OFF_X = 0
CH_OFF_Y = 1
CH_LOG_H = 2
CH_LOG_W = 3
CH_LOG_D = 4
N_CHANNELS = 5


@dataclass(frozen=True)
class GridSpec:
    image_size: tuple[int, int]
    stride: int = 32
    k: int = 5

    def __post_init__(self):
        w, h = self.image_size
        if self.stride <= 0 or w % self.stride or h % self.stride:
            raise DomainError(f"image size {self.image_size} not divisible by stride {self.stride}")
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")

    @property
    def cells(self) -> tuple[int, int]:
        """(cols, rows)."""
        return (self.image_size[0] // self.stride, self.image_size[1] // self.stride)

    @property
    def cols(self) -> int:
        return self.image_size[0] // self.stride

    @property
    def rows(self) -> int:
        return self.image_size[1] // self.stride

    def raw_shape(self) -> tuple[int, int, int, int]:
        return (self.rows, self.cols, self.k, N_CHANNELS)


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float)))


def logit(p: float) -> float:
    if not 0.0 < p < 1.0:
        raise DomainError(f"offset fraction must be strictly inside (0, 1), got {p}")
    return math.log(p / (1.0 - p))


@dataclass
class DecodedPrediction:
    """Decoded grid: arrays indexed [row, col, predictor]."""

    center_x: np.ndarray
    center_y: np.ndarray
    heights: np.ndarray
    widths: np.ndarray
    distances: np.ndarray

    def box_at(self, col: int, row: int, p: int) -> BBox2D:
        return BBox2D.from_center(
            self.center_x[row, col, p],
            self.center_y[row, col, p],
            self.widths[row, col, p],
            self.heights[row, col, p],
        )

    def center_at(self, col: int, row: int, p: int) -> tuple[float, float]:
        return (float(self.center_x[row, col, p]), float(self.center_y[row, col, p]))


def decode(raw: np.ndarray, anchors: AnchorSet, grid: GridSpec) -> DecodedPrediction:
    """Decode raw logits for every (cell, predictor) slot."""
    raw = np.asarray(raw, dtype=float)
    if anchors.k != grid.k:
        raise DomainError(f"anchor k={anchors.k} != grid k={grid.k}")
    if raw.shape != grid.raw_shape():
        raise DomainError(f"raw shape {raw.shape} != expected {grid.raw_shape()}")
    if not np.all(np.isfinite(raw)):
        raise DomainError("raw prediction contains non-finite values")
    s = float(grid.stride)
    col_origin = np.arange(grid.cols) * s
    row_origin = np.arange(grid.rows) * s
    boxes = anchors.box_array()
    return DecodedPrediction(
        center_x=col_origin[None, :, None] + sigmoid(raw[..., CH_OFF_X]) * s,
        center_y=row_origin[:, None, None] + sigmoid(raw[..., CH_OFF_Y]) * s,
        heights=boxes[None, None, :, 0] * np.exp(raw[..., CH_LOG_H]),
        widths=boxes[None, None, :, 1] * np.exp(raw[..., CH_LOG_W]),
        distances=anchors.anchor_array()[None, None, :] * np.exp(raw[..., CH_LOG_D]),
    )


def decode_entry(entry: np.ndarray, anchors: AnchorSet, grid: GridSpec, col: int, row: int, p: int):
    """Decode one (cell, predictor) slot; returns (BBox2D, distance)."""
    s = float(grid.stride)
    hm, wm = anchors.box_array()[p]
    cx = (col + float(sigmoid(entry[CH_OFF_X]))) * s
    cy = (row + float(sigmoid(entry[CH_OFF_Y]))) * s
    h = hm * math.exp(entry[CH_LOG_H])
    w = wm * math.exp(entry[CH_LOG_W])
    d = anchors.anchors[p] * math.exp(entry[CH_LOG_D])
    return BBox2D.from_center(cx, cy, w, h), d


def encode(bbox: BBox2D, distance: float, anchors: AnchorSet, grid: GridSpec,
           col: int, row: int, p: int) -> np.ndarray:
    """Exact inverse of decode for one target at its assigned slot."""
    if distance <= 0:
        raise DomainError(f"distance must be positive, got {distance}")
    s = float(grid.stride)
    cx, cy = bbox.center
    frac_x = cx / s - col
    frac_y = cy / s - row
    if not (0.0 <= frac_x <= 1.0 and 0.0 <= frac_y <= 1.0):
        raise DomainError(f"box center {bbox.center} outside cell ({col}, {row})")
    hm, wm = anchors.box_array()[p]
    entry = np.empty(N_CHANNELS)
    entry[CH_OFF_X] = logit(frac_x)
    entry[CH_OFF_Y] = logit(frac_y)
    entry[CH_LOG_H] = math.log(bbox.height / hm)
    entry[CH_LOG_W] = math.log(bbox.width / wm)
    entry[CH_LOG_D] = math.log(distance / anchors.anchors[p])
    return entry


def assign_predictor(target_distance: float, anchors: AnchorSet) -> int:
    """Predictor whose anchor is closest to the target, compared in the
    anchor set's own format; ties go to the smaller index."""
    if target_distance <= 0:
        raise DomainError(f"distance must be positive, got {target_distance}")
    t = anchors.format.transform(target_distance)
    return int(np.argmin(np.abs(anchors.transformed_anchors() - t)))


def assign_predictor_by_box(target_hw, anchors: AnchorSet) -> int:
    """Predictor whose average box has the highest centered IoU with the
    target (h, w); ties go to the smaller index."""
    ious = centered_iou([target_hw], anchors.box_array())[0]
    return int(np.argmax(ious))


def responsible_cell(center, grid: GridSpec) -> tuple[int, int]:
    """(col, row) of the cell containing a box center."""
    u, v = center
    w, h = grid.image_size
    if not (0.0 <= u <= w and 0.0 <= v <= h):
        raise DomainError(f"center {center} outside image {grid.image_size}")
    col = min(int(u // grid.stride), grid.cols - 1)
    row = min(int(v // grid.stride), grid.rows - 1)
    return (col, row)


@dataclass
class Assignment:
    """object index -> (col, row, predictor); losers of slot collisions
    are recorded in conflicts as (dropped index, slot, winner index)."""

    slots: dict = field(default_factory=dict)
    conflicts: list = field(default_factory=list)


def assign_all(objects, anchors: AnchorSet, grid: GridSpec, by: str = "distance") -> Assignment:
    """Map each object to its responsible (cell, predictor).

    When two objects claim the same slot the nearer one wins and the
    other is dropped with a recorded conflict.
    """
    if by not in ("distance", "bbox"):
        raise DomainError(f"unknown assignment rule {by!r}")
    assignment = Assignment()
    claimed = {}
    for i, obj in enumerate(objects):
        cell = responsible_cell(obj.bbox.center, grid)
        if by == "distance":
            p = assign_predictor(distance_of(obj.location), anchors)
        else:
            p = assign_predictor_by_box((obj.bbox.height, obj.bbox.width), anchors)
        slot = (cell[0], cell[1], p)
        if slot in claimed:
            winner = claimed[slot]
            if distance_of(obj.location) < distance_of(objects[winner].location):
                assignment.conflicts.append((winner, slot, i))
                del assignment.slots[winner]
                claimed[slot] = i
                assignment.slots[i] = slot
            else:
                assignment.conflicts.append((i, slot, winner))
        else:
            claimed[slot] = i
            assignment.slots[i] = slot
    return assignment


def serialize_raw(raw: np.ndarray) -> np.ndarray:
    """Flatten to the normative (row, col, predictor, channel) order."""
    return np.ascontiguousarray(raw).ravel()


def deserialize_raw(flat: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.asarray(flat, dtype=float).reshape(grid.raw_shape())
