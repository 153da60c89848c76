"""Box geometry in normalized image coordinates.

The scalar :class:`Box` type (center x/y, width, height) is the API-level
representation; internal math uses [N, 4] arrays in either cxcywh or corner
(xyxy) form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ovdet.errors import DataError


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (0.0 <= self.cx <= 1.0 and 0.0 <= self.cy <= 1.0):
            raise DataError(f"box center out of range: {self}")
        if not (0.0 < self.w <= 1.0 and 0.0 < self.h <= 1.0):
            raise DataError(f"box size out of range: {self}")

    def to_xyxy(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2,
                self.cx + self.w / 2, self.cy + self.h / 2)

    @staticmethod
    def from_xyxy(x0: float, y0: float, x1: float, y1: float) -> "Box":
        return Box((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def as_array(self) -> np.ndarray:
        return np.array([self.cx, self.cy, self.w, self.h], dtype=np.float64)


def cxcywh_to_xyxy(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    half = boxes[..., 2:] / 2
    return np.concatenate([boxes[..., :2] - half, boxes[..., :2] + half], axis=-1)


def xyxy_to_cxcywh(boxes: np.ndarray) -> np.ndarray:
    boxes = np.asarray(boxes, dtype=np.float64)
    wh = boxes[..., 2:] - boxes[..., :2]
    return np.concatenate([boxes[..., :2] + wh / 2, wh], axis=-1)


def _areas(xyxy: np.ndarray) -> np.ndarray:
    return np.clip(xyxy[..., 2] - xyxy[..., 0], 0, None) * \
        np.clip(xyxy[..., 3] - xyxy[..., 1], 0, None)


def iou_matrix(a_xyxy: np.ndarray, b_xyxy: np.ndarray) -> np.ndarray:
    """Pairwise IoU of [N, 4] vs [M, 4] corner-form boxes -> [N, M]."""
    a = np.asarray(a_xyxy, dtype=np.float64)[:, None, :]
    b = np.asarray(b_xyxy, dtype=np.float64)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    union = _areas(a) + _areas(b) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def giou_matrix(a_xyxy: np.ndarray, b_xyxy: np.ndarray) -> np.ndarray:
    """Pairwise generalized IoU: IoU minus the hull area not covered by the
    union, normalized by the hull. Ranges over [-1, 1]."""
    a = np.asarray(a_xyxy, dtype=np.float64)[:, None, :]
    b = np.asarray(b_xyxy, dtype=np.float64)[None, :, :]
    iw = np.clip(np.minimum(a[..., 2], b[..., 2]) - np.maximum(a[..., 0], b[..., 0]), 0, None)
    ih = np.clip(np.minimum(a[..., 3], b[..., 3]) - np.maximum(a[..., 1], b[..., 1]), 0, None)
    inter = iw * ih
    union = _areas(a) + _areas(b) - inter
    iou = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)
    hw = np.maximum(a[..., 2], b[..., 2]) - np.minimum(a[..., 0], b[..., 0])
    hh = np.maximum(a[..., 3], b[..., 3]) - np.minimum(a[..., 1], b[..., 1])
    hull = np.clip(hw, 0, None) * np.clip(hh, 0, None)
    return np.where(hull > 0, iou - (hull - union) / np.where(hull > 0, hull, 1.0), iou)


def iou(a: Box, b: Box) -> float:
    return float(iou_matrix(np.array([a.to_xyxy()]), np.array([b.to_xyxy()]))[0, 0])


def giou(a: Box, b: Box) -> float:
    return float(giou_matrix(np.array([a.to_xyxy()]), np.array([b.to_xyxy()]))[0, 0])
