"""Bipartite-matching detection loss for federated multi-label annotations.

Ground-truth instances are assigned to predicted tokens by a Hungarian match
over a class + L1 + gIoU cost (equal weights, mirroring the loss). Matched
tokens are supervised toward their instance's multi-hot label row; every
other token is supervised as negative for every query. Classification uses
focal sigmoid cross-entropy, so labels need not be mutually exclusive. All
terms normalize per example by the instance count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ovdet.boxes import cxcywh_to_xyxy, giou_matrix
from ovdet.errors import ConfigError, DataError
from ovdet.matching import hungarian
from ovdet.nn.tensor import (
    Tensor,
    log_sigmoid,
    maximum,
    minimum,
    relu,
    sigmoid,
)


@dataclass(frozen=True)
class FocalParams:
    alpha: float = 0.3
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError("alpha must lie in (0, 1)")
        if self.gamma < 0.0:
            raise ConfigError("gamma must be non-negative")


def focal_bce(logit, target, fp: FocalParams = FocalParams()) -> Tensor:
    """Elementwise focal sigmoid cross-entropy; ``target`` is 0/1.

    Positive targets contribute -alpha (1-p)^gamma log p, negatives
    -(1-alpha) p^gamma log(1-p), with p = sigmoid(logit). Uses log-sigmoid
    throughout, so saturated logits stay finite.
    """
    x = logit if isinstance(logit, Tensor) else Tensor(logit)
    t = np.asarray(target, dtype=np.float64)
    p = sigmoid(x)
    pos = (-log_sigmoid(x)) * (1.0 - p) ** fp.gamma * fp.alpha
    neg = (-log_sigmoid(-x)) * p ** fp.gamma * (1.0 - fp.alpha)
    return pos * t + neg * (1.0 - t)


def focal_bce_np(logits: np.ndarray, targets: np.ndarray,
                 fp: FocalParams = FocalParams()) -> np.ndarray:
    """Graph-free twin of :func:`focal_bce` for cost matrices."""
    from ovdet.nn.tensor import _sigmoid_np

    x = np.asarray(logits, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    sp_neg = np.log1p(np.exp(-np.abs(x))) + np.maximum(-x, 0.0)   # -log sigmoid(x)
    sp_pos = np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)    # -log sigmoid(-x)
    p = _sigmoid_np(x)
    pos = fp.alpha * (1.0 - p) ** fp.gamma * sp_neg
    neg = (1.0 - fp.alpha) * p ** fp.gamma * sp_pos
    return pos * t + neg * (1.0 - t)


def giou_pairs(pred_cxcywh: Tensor, gt_cxcywh: np.ndarray) -> Tensor:
    """Differentiable gIoU between paired boxes [N, 4] -> [N]."""
    p = pred_cxcywh
    g = np.asarray(gt_cxcywh, dtype=np.float64)
    px0 = p[..., 0] - p[..., 2] * 0.5
    py0 = p[..., 1] - p[..., 3] * 0.5
    px1 = p[..., 0] + p[..., 2] * 0.5
    py1 = p[..., 1] + p[..., 3] * 0.5
    gx0, gy0 = g[..., 0] - g[..., 2] / 2, g[..., 1] - g[..., 3] / 2
    gx1, gy1 = g[..., 0] + g[..., 2] / 2, g[..., 1] + g[..., 3] / 2
    iw = relu(minimum(px1, gx1) - maximum(px0, gx0))
    ih = relu(minimum(py1, gy1) - maximum(py0, gy0))
    inter = iw * ih
    area_p = (px1 - px0) * (py1 - py0)
    area_g = (gx1 - gx0) * (gy1 - gy0)
    union = area_p + area_g - inter
    iou = inter / union
    hull = (maximum(px1, gx1) - minimum(px0, gx0)) * (maximum(py1, gy1) - minimum(py0, gy0))
    return iou - (hull - union) / hull


def build_targets(instance_labels: list[set[str]] | list[list[str]],
                  query_space: list[str]) -> np.ndarray:
    """Multi-hot [N_gt, Q] target rows over the image's query space.

    Categories absent from the query space are not queries at all, so they
    silently contribute no supervision; an instance label missing from the
    space, however, is a query-space construction bug and raises.
    """
    index = {c: k for k, c in enumerate(query_space)}
    if len(index) != len(query_space):
        raise DataError("query space contains duplicates")
    out = np.zeros((len(instance_labels), len(query_space)), dtype=np.float64)
    for i, labels in enumerate(instance_labels):
        for label in labels:
            if label not in index:
                raise DataError(f"instance label {label!r} missing from the query space")
            out[i, index[label]] = 1.0
    return out


def matching_cost(pred_boxes: np.ndarray, pred_logits: np.ndarray,
                  gt_boxes: np.ndarray, targets: np.ndarray,
                  fp: FocalParams = FocalParams()) -> np.ndarray:
    """Cost matrix [N_gt, T]: mean focal CE over queries + L1 + (1 - gIoU),
    with equal weights."""
    n_gt = len(gt_boxes)
    t_tokens = len(pred_boxes)
    if n_gt > t_tokens:
        raise ConfigError("more ground-truth instances than tokens")
    q = targets.shape[1] if targets.ndim == 2 else 0
    focal1 = focal_bce_np(pred_logits, np.ones_like(pred_logits), fp)   # [T, Q]
    focal0 = focal_bce_np(pred_logits, np.zeros_like(pred_logits), fp)
    cls = (targets @ focal1.T + (1.0 - targets) @ focal0.T) / max(q, 1)
    l1 = np.abs(gt_boxes[:, None, :] - pred_boxes[None, :, :]).sum(axis=-1)
    giou = giou_matrix(cxcywh_to_xyxy(gt_boxes), cxcywh_to_xyxy(pred_boxes))
    return cls + l1 + (1.0 - giou)


def match_instances(pred_boxes: Tensor, pred_logits: Tensor,
                    gt_boxes: np.ndarray, targets: np.ndarray,
                    fp: FocalParams = FocalParams()) -> np.ndarray:
    """Hungarian assignment of instances to tokens on detached predictions."""
    if len(gt_boxes) == 0:
        return np.zeros(0, dtype=np.int64)
    cost = matching_cost(pred_boxes.data, pred_logits.data, gt_boxes, targets, fp)
    return hungarian(cost)


def detection_loss_terms(pred_boxes: Tensor, pred_logits: Tensor,
                         gt_boxes: np.ndarray, targets: np.ndarray,
                         assign: np.ndarray,
                         fp: FocalParams = FocalParams()) -> dict[str, Tensor]:
    """Loss components for a fixed instance->token assignment.

    The classification term sums focal CE over every (token, query) cell and
    normalizes by the instance count alone; easy negatives contribute almost
    nothing under the focal weighting, which keeps the term on the same
    scale as the box terms regardless of the query-space size.
    """
    t_tokens, q = pred_logits.shape
    n_gt = len(gt_boxes)
    norm = float(max(1, n_gt))

    full_targets = np.zeros((t_tokens, q), dtype=np.float64)
    if n_gt > 0:
        full_targets[assign] = targets

    cls = focal_bce(pred_logits, full_targets, fp).sum() * (1.0 / norm)
    if n_gt > 0:
        matched = pred_boxes[assign]
        l1 = (matched - gt_boxes).abs().sum() * (1.0 / norm)
        giou_term = (1.0 - giou_pairs(matched, gt_boxes)).sum() * (1.0 / norm)
    else:
        l1 = Tensor(np.array(0.0))
        giou_term = Tensor(np.array(0.0))
    total = cls + l1 + giou_term
    return {"total": total, "cls": cls, "l1": l1, "giou": giou_term,
            "assignment": assign}


def detection_loss(pred_boxes: Tensor, pred_logits: Tensor,
                   gt_boxes: np.ndarray, targets: np.ndarray,
                   fp: FocalParams = FocalParams()) -> dict[str, Tensor]:
    """Set-prediction loss for one example.

    ``pred_boxes`` [T, 4] cxcywh, ``pred_logits`` [T, Q]; ``gt_boxes``
    [N, 4], ``targets`` [N, Q] multi-hot. Matching runs on detached values
    and stays fixed for the gradient. Returns total plus the cls/l1/giou
    components, each normalized by max(1, N_gt); the classification term is
    additionally divided by the query count.
    """
    assign = match_instances(pred_boxes, pred_logits, gt_boxes, targets, fp)
    return detection_loss_terms(pred_boxes, pred_logits, gt_boxes, targets, assign, fp)
