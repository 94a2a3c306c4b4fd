"""Box and distance losses with analytic gradients.

Box regression uses the complete-IoU loss: 1 - IoU plus a normalized
center-distance term and an aspect-ratio consistency term whose weight
is treated as constant during differentiation.  Distance regression is
a plain squared error in meters.  Gradients are taken with respect to
the five raw logits by chaining through the decode transforms, and a
central-difference harness verifies them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .anchors import AnchorSet
from .data import BBox2D
from .errors import DomainError
from .head import CH_LOG_D, CH_LOG_H, CH_LOG_W, CH_OFF_X, CH_OFF_Y, GridSpec, N_CHANNELS

_C2_EPS = 1e-9
_ASPECT_K = 4.0 / math.pi**2


def iou(box_a: BBox2D, box_b: BBox2D) -> float:
    """Intersection over union; 0 for disjoint boxes."""
    iw = min(box_a.right, box_b.right) - max(box_a.left, box_b.left)
    ih = min(box_a.bottom, box_b.bottom) - max(box_a.top, box_b.top)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = box_a.width * box_a.height + box_b.width * box_b.height - inter
    return inter / union


def ciou_loss(pred: BBox2D, gt: BBox2D) -> float:
    return _ciou_with_grad(pred, gt)[0]


def ciou_alpha(pred: BBox2D, gt: BBox2D) -> float:
    """The aspect-term weight at this configuration (a constant during
    differentiation)."""
    return _ciou_with_grad(pred, gt)[2]


def _pred_side(a: float, b: float) -> float:
    """Derivative share of min(a, b) (or -max) going to the first arg.

    Coinciding edges split the derivative evenly, with a small relative
    tolerance so the gradient still vanishes at a target hit only up to
    rounding.
    """
    tol = 1e-7 * max(1.0, abs(a), abs(b))
    if a < b - tol:
        return 1.0
    if a > b + tol:
        return 0.0
    return 0.5


def _ciou_with_grad(pred: BBox2D, gt: BBox2D, alpha_override: float | None = None):
    """(loss, gradient w.r.t. (center_x, center_y, width, height), alpha).

    Min/max branch indicators give one-sided derivatives at the kinks;
    a zero-area intersection contributes zero gradient.  When
    `alpha_override` is given the aspect-term weight is pinned to it,
    which is what the reported gradient assumes.
    """
    px, py = pred.center
    pw, ph = pred.width, pred.height
    gx, gy = gt.center
    gw, gh = gt.width, gt.height
    pl, pt, pr, pb = pred.as_tuple()
    gl, gt_, gr, gb = gt.as_tuple()

    # IoU and its gradient
    iw = min(pr, gr) - max(pl, gl)
    ih = min(pb, gb) - max(pt, gt_)
    # how much each min/max derivative flows to the pred side; ties are
    # split evenly so the gradient vanishes at exactly coincident boxes
    right_active = _pred_side(pr, gr)
    left_active = _pred_side(gl, pl)
    bot_active = _pred_side(pb, gb)
    top_active = _pred_side(gt_, pt)
    diw = np.array([right_active - left_active, 0.0, 0.5 * (right_active + left_active), 0.0])
    dih = np.array([0.0, bot_active - top_active, 0.0, 0.5 * (bot_active + top_active)])

    area_p = pw * ph
    darea = np.array([0.0, 0.0, ph, pw])
    if iw > 0 and ih > 0:
        inter = iw * ih
        dinter = ih * diw + iw * dih
    else:
        inter = 0.0
        dinter = np.zeros(4)
    union = area_p + gw * gh - inter
    dunion = darea - dinter
    iou_val = inter / union
    diou_val = (dinter * union - inter * dunion) / union**2

    # normalized center distance
    rho2 = (px - gx) ** 2 + (py - gy) ** 2
    drho2 = np.array([2 * (px - gx), 2 * (py - gy), 0.0, 0.0])
    ew = max(pr, gr) - min(pl, gl)
    eh = max(pb, gb) - min(pt, gt_)
    r_out = _pred_side(gr, pr)
    l_out = _pred_side(pl, gl)
    b_out = _pred_side(gb, pb)
    t_out = _pred_side(pt, gt_)
    dew = np.array([r_out - l_out, 0.0, 0.5 * (r_out + l_out), 0.0])
    deh = np.array([0.0, b_out - t_out, 0.0, 0.5 * (b_out + t_out)])
    c2 = max(ew * ew + eh * eh, _C2_EPS)
    dc2 = 2 * ew * dew + 2 * eh * deh
    center_term = rho2 / c2
    dcenter = (drho2 * c2 - rho2 * dc2) / c2**2

    # aspect-ratio consistency; its weight alpha is held constant
    q = math.atan2(gw, gh) - math.atan2(pw, ph)
    v = _ASPECT_K * q * q
    dq_dw = -ph / (ph * ph + pw * pw)
    dq_dh = pw / (ph * ph + pw * pw)
    dv = 2 * _ASPECT_K * q * np.array([0.0, 0.0, dq_dw, dq_dh])
    if alpha_override is None:
        denom = (1.0 - iou_val) + v
        alpha = v / denom if denom > 0 else 0.0
    else:
        alpha = alpha_override

    loss = 1.0 - iou_val + center_term + alpha * v
    grad = -diou_val + dcenter + alpha * dv
    return loss, grad, alpha


def distance_l2_loss(pred_d: float, gt_d: float) -> float:
    """Squared distance error in meters^2."""
    return (pred_d - gt_d) ** 2


@dataclass
class LossBreakdown:
    ciou: float
    distance: float
    total: float
    ciou_grad: np.ndarray
    distance_grad: np.ndarray
    total_grad: np.ndarray


def _decode_slot(entry, anchors: AnchorSet, grid: GridSpec, col: int, row: int, p: int):
    s = float(grid.stride)
    hm, wm = anchors.box_array()[p]
    sig_x = 1.0 / (1.0 + math.exp(-entry[CH_OFF_X]))
    sig_y = 1.0 / (1.0 + math.exp(-entry[CH_OFF_Y]))
    cx = (col + sig_x) * s
    cy = (row + sig_y) * s
    h = hm * math.exp(entry[CH_LOG_H])
    w = wm * math.exp(entry[CH_LOG_W])
    d = anchors.anchors[p] * math.exp(entry[CH_LOG_D])
    return cx, cy, w, h, d, sig_x, sig_y


def loss_and_grad(
    entry,
    target_box: BBox2D,
    target_distance: float,
    anchors: AnchorSet,
    grid: GridSpec,
    col: int,
    row: int,
    p: int,
    lam: float = 0.1,
) -> LossBreakdown:
    """Total loss and analytic gradient w.r.t. the slot's five logits.

    total = ciou + lam * squared distance error.  Box and distance are
    treated as independent, so the box logits never see the distance
    term and vice versa.
    """
    entry = np.asarray(entry, dtype=float)
    cx, cy, w, h, d, sig_x, sig_y = _decode_slot(entry, anchors, grid, col, row, p)
    box_loss, box_grad, _ = _ciou_with_grad(BBox2D.from_center(cx, cy, w, h), target_box)

    s = float(grid.stride)
    ciou_grad = np.zeros(N_CHANNELS)
    ciou_grad[CH_OFF_X] = box_grad[0] * s * sig_x * (1.0 - sig_x)
    ciou_grad[CH_OFF_Y] = box_grad[1] * s * sig_y * (1.0 - sig_y)
    ciou_grad[CH_LOG_W] = box_grad[2] * w
    ciou_grad[CH_LOG_H] = box_grad[3] * h

    dist_loss = distance_l2_loss(d, target_distance)
    dist_grad = np.zeros(N_CHANNELS)
    dist_grad[CH_LOG_D] = 2.0 * (d - target_distance) * d

    return LossBreakdown(
        ciou=box_loss,
        distance=dist_loss,
        total=box_loss + lam * dist_loss,
        ciou_grad=ciou_grad,
        distance_grad=dist_grad,
        total_grad=ciou_grad + lam * dist_grad,
    )


def finite_diff_check(
    entry,
    target_box: BBox2D,
    target_distance: float,
    anchors: AnchorSet,
    grid: GridSpec,
    col: int,
    row: int,
    p: int,
    lam: float = 0.1,
    h: float = 1e-5,
) -> float:
    """Max relative error of the analytic gradient against central
    differences over the five logits.

    The aspect-term weight is frozen to its value at `entry` while
    differencing, since that is the constant the gradient is taken
    under.  Components below 1e-3 in magnitude are effectively compared
    absolutely (the denominator is floored there), keeping kink noise
    out of the ratio.
    """
    entry = np.asarray(entry, dtype=float)
    analytic = loss_and_grad(entry, target_box, target_distance, anchors, grid, col, row, p, lam)
    cx, cy, w, hh, _, _, _ = _decode_slot(entry, anchors, grid, col, row, p)
    alpha0 = ciou_alpha(BBox2D.from_center(cx, cy, w, hh), target_box)

    def total_at(e):
        cx, cy, w, hh, d, _, _ = _decode_slot(e, anchors, grid, col, row, p)
        box_loss, _, _ = _ciou_with_grad(
            BBox2D.from_center(cx, cy, w, hh), target_box, alpha_override=alpha0
        )
        return box_loss + lam * distance_l2_loss(d, target_distance)

    worst = 0.0
    for c in range(N_CHANNELS):
        plus = entry.copy()
        minus = entry.copy()
        plus[c] += h
        minus[c] -= h
        numeric = (total_at(plus) - total_at(minus)) / (2.0 * h)
        a = analytic.total_grad[c]
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
        worst = max(worst, rel)
    return worst
