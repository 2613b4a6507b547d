"""Sparse head outputs to pixel-space boxes, and class-wise non-maximum suppression."""

from __future__ import annotations

import numpy as np

from eagr.events.stream import SensorGeometry
from eagr.models import Detection
from eagr.network.model import HeadOutput

DEFAULT_SCORE_THRESH = 0.1
DEFAULT_NMS_IOU = 0.65


def sigmoid(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    # split by sign so exp never overflows
    out = np.empty_like(values)
    pos = values >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-values[pos]))
    e = np.exp(values[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def decode(
    output: HeadOutput,
    geometry: SensorGeometry,
    score_thresh: float = DEFAULT_SCORE_THRESH,
) -> list[Detection]:
    """One candidate box per output node, kept when its score reaches ``score_thresh``.

    Centers are voxel coordinates plus the first two regression values, in units of the
    head stride; sizes are exp of the last two, in the same units. Boxes centered outside
    the guard band (half an image beyond each border) are dropped and sizes are capped at
    twice the image.
    """
    if not 0.0 <= score_thresh <= 1.0:
        raise ValueError(f"Score threshold must be in [0, 1], got {score_thresh}")
    if not len(output):
        return []
    g_x, g_y = output.grid
    s_x, s_y = geometry.width / g_x, geometry.height / g_y
    W, H = geometry.width, geometry.height
    cls_prob = sigmoid(output.cls)
    score = sigmoid(output.obj) * cls_prob.max(axis=1)
    label = cls_prob.argmax(axis=1)
    with np.errstate(over="ignore"):
        w = np.minimum(np.exp(output.reg[:, 2]) * s_x, 2.0 * W)
        h = np.minimum(np.exp(output.reg[:, 3]) * s_y, 2.0 * H)
    cx = (output.voxels[:, 0] + output.reg[:, 0]) * s_x
    cy = (output.voxels[:, 1] + output.reg[:, 1]) * s_y
    keep = (
        (score >= score_thresh)
        & (cx >= -W / 2) & (cx <= 1.5 * W)
        & (cy >= -H / 2) & (cy <= 1.5 * H)
        & (w > 0) & (h > 0)
    )
    return [
        Detection(
            class_id=int(label[i]),
            score=float(score[i]),
            cx=float(cx[i]),
            cy=float(cy[i]),
            w=float(w[i]),
            h=float(h[i]),
            head=output.index,
            voxel=(int(output.voxels[i, 0]), int(output.voxels[i, 1])),
        )
        for i in np.flatnonzero(keep)
    ]


def iou(a: Detection, b: Detection) -> float:
    ax0, ax1 = a.cx - a.w / 2, a.cx + a.w / 2
    ay0, ay1 = a.cy - a.h / 2, a.cy + a.h / 2
    bx0, bx1 = b.cx - b.w / 2, b.cx + b.w / 2
    by0, by1 = b.cy - b.h / 2, b.cy + b.h / 2
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union if union > 0 else 0.0


def nms(detections: list[Detection], iou_thresh: float = DEFAULT_NMS_IOU) -> list[Detection]:
    """Greedy per-class suppression in descending score order.

    A box is dropped when its IoU with an already kept box of its class reaches
    ``iou_thresh``. Ties in score keep input order.
    """
    if not 0.0 < iou_thresh <= 1.0:
        raise ValueError(f"IoU threshold must be in (0, 1], got {iou_thresh}")
    order = sorted(range(len(detections)), key=lambda i: -detections[i].score)
    kept: list[Detection] = []
    for i in order:
        det = detections[i]
        if all(k.class_id != det.class_id or iou(k, det) < iou_thresh for k in kept):
            kept.append(det)
    return kept


def detect(
    outputs: list[HeadOutput],
    geometry: SensorGeometry,
    score_thresh: float = DEFAULT_SCORE_THRESH,
    iou_thresh: float = DEFAULT_NMS_IOU,
) -> list[Detection]:
    """Decode both heads and suppress across them."""
    found: list[Detection] = []
    for output in outputs:
        found.extend(decode(output, geometry, score_thresh))
    return nms(found, iou_thresh)
