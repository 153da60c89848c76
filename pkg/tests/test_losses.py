"""Focal BCE, gIoU, matching cost, and the full set-prediction loss."""

import numpy as np
import pytest

from ovdet.boxes import Box, cxcywh_to_xyxy, giou, giou_matrix, iou
from ovdet.errors import ConfigError, DataError
from ovdet.losses import (
    FocalParams,
    build_targets,
    detection_loss,
    detection_loss_terms,
    focal_bce,
    focal_bce_np,
    giou_pairs,
    match_instances,
    matching_cost,
)
from ovdet.nn import Tensor, gradcheck


# ----------------------------------------------------------------------- gIoU


def test_giou_identical_is_one():
    b = Box(0.5, 0.5, 0.4, 0.2)
    assert giou(b, b) == pytest.approx(1.0, abs=1e-9)


def test_giou_hand_case_minus_one_third():
    # corner-form A=[0,0,1,1], B=[2,0,3,1]: IoU 0, union 2, hull 3
    a = np.array([[0.0, 0.0, 1.0, 1.0]])
    b = np.array([[2.0, 0.0, 3.0, 1.0]])
    assert giou_matrix(a, b)[0, 0] == pytest.approx(-1.0 / 3.0, abs=1e-9)


def test_giou_far_apart_approaches_minus_one():
    a = Box(0.005, 0.005, 0.01, 0.01)
    b = Box(0.995, 0.995, 0.01, 0.01)
    assert giou(a, b) <= -0.99


def test_giou_symmetric():
    rng = np.random.default_rng(0)
    for _ in range(20):
        a = Box(*rng.uniform(0.3, 0.7, 2), *rng.uniform(0.05, 0.3, 2))
        b = Box(*rng.uniform(0.3, 0.7, 2), *rng.uniform(0.05, 0.3, 2))
        assert giou(a, b) == pytest.approx(giou(b, a), abs=1e-12)


def test_giou_degenerate_box_still_defined():
    a = np.array([[0.2, 0.2, 0.2, 0.4]])  # zero width
    b = np.array([[0.1, 0.1, 0.5, 0.5]])
    val = giou_matrix(a, b)[0, 0]
    assert np.isfinite(val) and -1.0 <= val <= 1.0


def test_giou_pairs_matches_matrix_and_gradchecks():
    rng = np.random.default_rng(1)
    pred = np.column_stack([rng.uniform(0.3, 0.7, 6), rng.uniform(0.3, 0.7, 6),
                            rng.uniform(0.1, 0.3, 6), rng.uniform(0.1, 0.3, 6)])
    gt = np.column_stack([rng.uniform(0.3, 0.7, 6), rng.uniform(0.3, 0.7, 6),
                          rng.uniform(0.1, 0.3, 6), rng.uniform(0.1, 0.3, 6)])
    vals = giou_pairs(Tensor(pred), gt).data
    expected = np.diag(giou_matrix(cxcywh_to_xyxy(pred), cxcywh_to_xyxy(gt)))
    assert np.allclose(vals, expected, atol=1e-12)
    assert gradcheck(lambda p: giou_pairs(p, gt).sum(), pred) < 1e-4


# ------------------------------------------------------------------ focal BCE


def test_focal_confident_correct_is_tiny():
    assert focal_bce(Tensor(np.array(30.0)), 1.0).item() < 1e-10


def test_focal_hand_value_at_zero_logit():
    # p = 0.5: 0.3 * 0.25 * ln 2
    expected = 0.3 * 0.25 * np.log(2.0)
    assert focal_bce(Tensor(np.array(0.0)), 1.0).item() == pytest.approx(expected, abs=1e-12)


def test_focal_reduces_to_half_bce():
    rng = np.random.default_rng(2)
    logits = rng.normal(scale=3.0, size=50)
    targets = rng.integers(0, 2, size=50).astype(np.float64)
    fp = FocalParams(alpha=0.5, gamma=0.0)
    got = focal_bce(Tensor(logits), targets, fp).data
    p = 1.0 / (1.0 + np.exp(-logits))
    bce = -(targets * np.log(p) + (1 - targets) * np.log(1 - p))
    assert np.allclose(got, 0.5 * bce, atol=1e-9)


def test_focal_tensor_and_numpy_twins_agree():
    rng = np.random.default_rng(3)
    logits = rng.normal(scale=5.0, size=(4, 7))
    targets = rng.integers(0, 2, size=(4, 7)).astype(np.float64)
    a = focal_bce(Tensor(logits), targets).data
    b = focal_bce_np(logits, targets)
    assert np.allclose(a, b, atol=1e-12)


def test_focal_saturated_logits_stay_finite():
    vals = focal_bce(Tensor(np.array([1e4, -1e4])), np.array([0.0, 1.0])).data
    assert np.isfinite(vals).all()


def test_focal_gradcheck():
    rng = np.random.default_rng(4)
    logits = rng.normal(size=(3, 5))
    targets = rng.integers(0, 2, size=(3, 5)).astype(np.float64)
    assert gradcheck(lambda x: focal_bce(x, targets).sum(), logits) < 1e-4


def test_focal_params_validated():
    with pytest.raises(ConfigError):
        FocalParams(alpha=0.0)
    with pytest.raises(ConfigError):
        FocalParams(gamma=-1.0)


# -------------------------------------------------------------------- targets


def test_build_targets_multi_hot_row():
    out = build_targets([{"a", "b"}], ["a", "b", "c"])
    assert out.tolist() == [[1.0, 1.0, 0.0]]


def test_build_targets_empty():
    out = build_targets([], ["a", "b"])
    assert out.shape == (0, 2)


def test_build_targets_shared_label():
    out = build_targets([{"a"}, {"a"}], ["a", "b"])
    assert np.array_equal(out[:, 0], [1.0, 1.0])


def test_build_targets_missing_label_raises():
    with pytest.raises(DataError):
        build_targets([{"zebra"}], ["a", "b"])


# -------------------------------------------------------------- matching cost


def straightforward_cost(pred_boxes, pred_logits, gt_boxes, targets, fp):
    """Test-side loop re-implementation of the cost matrix."""
    n, t = len(gt_boxes), len(pred_boxes)
    out = np.zeros((n, t))
    for i in range(n):
        for tok in range(t):
            cls = focal_bce_np(pred_logits[tok], targets[i], fp).mean()
            l1 = np.abs(pred_boxes[tok] - gt_boxes[i]).sum()
            g = giou(Box(*gt_boxes[i]), Box(*pred_boxes[tok]))
            out[i, tok] = cls + l1 + (1.0 - g)
    return out


def random_scene(rng, n_gt=3, n_tok=8, n_q=5):
    gt = np.column_stack([rng.uniform(0.3, 0.7, n_gt), rng.uniform(0.3, 0.7, n_gt),
                          rng.uniform(0.1, 0.3, n_gt), rng.uniform(0.1, 0.3, n_gt)])
    pred = np.column_stack([rng.uniform(0.3, 0.7, n_tok), rng.uniform(0.3, 0.7, n_tok),
                            rng.uniform(0.1, 0.3, n_tok), rng.uniform(0.1, 0.3, n_tok)])
    logits = rng.normal(size=(n_tok, n_q))
    targets = rng.integers(0, 2, size=(n_gt, n_q)).astype(np.float64)
    return pred, logits, gt, targets


def test_matching_cost_matches_straightforward_reimplementation():
    fp = FocalParams()
    rng = np.random.default_rng(5)
    for _ in range(10):
        pred, logits, gt, targets = random_scene(rng)
        fast = matching_cost(pred, logits, gt, targets, fp)
        slow = straightforward_cost(pred, logits, gt, targets, fp)
        assert np.allclose(fast, slow, atol=1e-9)


def test_matching_cost_identical_tokens_identical_columns():
    rng = np.random.default_rng(6)
    pred, logits, gt, targets = random_scene(rng, n_tok=4)
    pred[2] = pred[0]
    logits[2] = logits[0]
    cost = matching_cost(pred, logits, gt, targets)
    assert np.allclose(cost[:, 0], cost[:, 2], atol=1e-12)


def test_matching_cost_aligned_token_near_minimal():
    rng = np.random.default_rng(7)
    pred, logits, gt, targets = random_scene(rng, n_gt=1, n_tok=6, n_q=3)
    pred[4] = gt[0]
    logits[4] = np.where(targets[0] > 0, 12.0, -12.0)
    cost = matching_cost(pred, logits, gt, targets)
    assert cost[0].argmin() == 4


def test_matching_cost_capacity_error():
    rng = np.random.default_rng(8)
    pred, logits, gt, targets = random_scene(rng, n_gt=3, n_tok=2)
    with pytest.raises(ConfigError):
        matching_cost(pred, logits, gt, targets)


# ------------------------------------------------------------- detection loss


def test_detection_loss_zero_instances_pure_negative_cls():
    rng = np.random.default_rng(9)
    pred, logits, _, _ = random_scene(rng, n_gt=0)
    out = detection_loss(Tensor(pred), Tensor(logits), np.zeros((0, 4)),
                         np.zeros((0, 5)))
    assert out["l1"].item() == 0.0 and out["giou"].item() == 0.0
    expected = focal_bce_np(logits, np.zeros_like(logits)).sum()
    assert out["cls"].item() == pytest.approx(expected, abs=1e-12)


def test_detection_loss_perfect_fit_is_tiny():
    rng = np.random.default_rng(10)
    pred, logits, gt, targets = random_scene(rng, n_gt=3, n_tok=8, n_q=4)
    pred[:3] = gt
    logits[:] = -40.0
    logits[:3] = np.where(targets > 0, 40.0, -40.0)
    out = detection_loss(Tensor(pred), Tensor(logits), gt, targets)
    assert out["total"].item() <= 1e-3


def test_detection_loss_permutation_invariant():
    rng = np.random.default_rng(11)
    pred, logits, gt, targets = random_scene(rng, n_gt=4, n_tok=9, n_q=6)
    base = detection_loss(Tensor(pred), Tensor(logits), gt, targets)["total"].item()
    perm = rng.permutation(4)
    shuffled = detection_loss(Tensor(pred), Tensor(logits), gt[perm], targets[perm])
    assert abs(shuffled["total"].item() - base) <= 1e-12
    # reorder the query space together with the target columns
    qperm = rng.permutation(6)
    requeried = detection_loss(Tensor(pred), Tensor(logits[:, qperm]), gt,
                               targets[:, qperm])
    assert abs(requeried["total"].item() - base) <= 1e-12


def test_detection_loss_gradcheck_fixed_matching():
    rng = np.random.default_rng(12)
    pred, logits, gt, targets = random_scene(rng, n_gt=2, n_tok=5, n_q=3)
    assign = match_instances(Tensor(pred), Tensor(logits), gt, targets)

    def f_boxes(p):
        return detection_loss_terms(p, Tensor(logits), gt, targets, assign)["total"]

    def f_logits(lg):
        return detection_loss_terms(Tensor(pred), lg, gt, targets, assign)["total"]

    assert gradcheck(f_boxes, pred) < 1e-4
    assert gradcheck(f_logits, logits) < 1e-4


def test_detection_loss_gradcheck_recomputed_matching_coarse():
    # matching may flip under perturbation; allow a coarser tolerance
    rng = np.random.default_rng(13)
    pred, logits, gt, targets = random_scene(rng, n_gt=2, n_tok=5, n_q=3)

    def f(p):
        return detection_loss(p, Tensor(logits), gt, targets)["total"]

    assert gradcheck(f, pred) < 1e-2


def test_scaling_cost_keeps_assignment():
    rng = np.random.default_rng(14)
    pred, logits, gt, targets = random_scene(rng)
    from ovdet.matching import hungarian
    cost = matching_cost(pred, logits, gt, targets)
    assert np.array_equal(hungarian(cost), hungarian(cost * 7.3))
