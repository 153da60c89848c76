"""COCO-style AP, the federated evaluation protocol, zero-shot splitting,
and the one-shot (image-conditioned) benchmark.

Detections are matched greedily in score order against unmatched ground
truth at each IoU threshold; AP is the 101-point interpolated area under
the precision-recall curve. Under the federated protocol a category's
detections on an image are scored only when the image has a verdict for
that category (it appears among the positives or negatives).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ovdet.boxes import Box, iou_matrix
from ovdet.data.federated import FederatedExample, remove_labels
from ovdet.errors import ConfigError
from ovdet.model import DetectionModel
from ovdet.queries import QueryPatch, embed_text_queries, image_query_set

DEFAULT_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_GRID = np.linspace(0.0, 1.0, 101)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = DEFAULT_THRESHOLDS
    max_detections: int = 100
    per_category: bool = True

    def __post_init__(self):
        if not all(0.0 < t <= 1.0 for t in self.iou_thresholds):
            raise ConfigError("IoU thresholds must lie in (0, 1]")
        if list(self.iou_thresholds) != sorted(self.iou_thresholds):
            raise ConfigError("IoU thresholds must be sorted")


@dataclass(frozen=True)
class ScoredBox:
    image_id: str
    box_xyxy: tuple[float, float, float, float]
    score: float


def iou(a: Box, b: Box) -> float:
    from ovdet.boxes import iou as _iou
    return _iou(a, b)


def _pr_curve(dets: list[ScoredBox], gts: dict[str, np.ndarray], iou_thr: float
              ) -> tuple[np.ndarray, np.ndarray, int]:
    """Greedy matching in score order; returns (precision, recall, n_gt)."""
    n_gt = int(sum(len(v) for v in gts.values()))
    order = sorted(range(len(dets)), key=lambda i: (-dets[i].score, dets[i].image_id, i))
    matched: dict[str, np.ndarray] = {k: np.zeros(len(v), dtype=bool)
                                      for k, v in gts.items()}
    tp = np.zeros(len(order))
    for rank, i in enumerate(order):
        det = dets[i]
        cand = gts.get(det.image_id)
        if cand is None or len(cand) == 0:
            continue
        ious = iou_matrix(np.array([det.box_xyxy]), cand)[0]
        ious[matched[det.image_id]] = -1.0
        j = int(np.argmax(ious))
        if ious[j] >= iou_thr:
            matched[det.image_id][j] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(order) + 1)
    precision = cum_tp / ranks if len(order) else np.zeros(0)
    recall = cum_tp / n_gt if n_gt else np.zeros(len(order))
    return precision, recall, n_gt


def interpolated_ap(precision: np.ndarray, recall: np.ndarray) -> float:
    """101-point interpolation: mean over the recall grid of the max
    precision achieved at or beyond each recall level."""
    if len(precision) == 0:
        return 0.0
    # precision envelope from the right
    env = np.maximum.accumulate(precision[::-1])[::-1]
    out = np.zeros(len(RECALL_GRID))
    idx = np.searchsorted(recall, RECALL_GRID, side="left")
    valid = idx < len(env)
    out[valid] = env[idx[valid]]
    return float(out.mean())


def average_precision(dets: list[ScoredBox], gts: dict[str, np.ndarray],
                      iou_thr: float) -> float:
    """AP for one category at one threshold; 0 when the category has GT but
    no detections, undefined (caller skips) when it has no GT at all."""
    precision, recall, n_gt = _pr_curve(dets, gts, iou_thr)
    if n_gt == 0:
        return float("nan")
    return interpolated_ap(precision, recall)


# --------------------------------------------------------- dataset protocol


def _gather_ground_truth(examples: list[FederatedExample], category: str
                         ) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for ex in examples:
        boxes = [inst.box.to_xyxy() for inst in ex.instances
                 if category in inst.labels and not inst.crowd]
        if boxes:
            out[ex.example_id] = np.array(boxes)
    return out


def evaluate_detections(per_image_detections: dict[str, list],
                        examples: list[FederatedExample],
                        categories: list[str],
                        cfg: EvalConfig = EvalConfig()) -> dict:
    """Score per-image Detection lists against a federated dataset.

    ``per_image_detections`` maps example_id -> list of Detection. Only
    (category, image) pairs with a federated verdict are scored. Returns ap
    (mean over thresholds), ap50, and a per-category table.
    """
    by_example = {ex.example_id: ex for ex in examples}
    per_cat: dict[str, dict[float, float]] = {}
    curves: dict[str, tuple[np.ndarray, np.ndarray]] = {}
    for category in categories:
        gts = _gather_ground_truth(examples, category)
        dets: list[ScoredBox] = []
        for ex_id, detections in per_image_detections.items():
            ex = by_example[ex_id]
            if category not in ex.positive and category not in ex.negative:
                continue  # no verdict for this category on this image
            cat_dets = [d for d in detections if d.query_name == category]
            cat_dets.sort(key=lambda d: -d.score)
            for d in cat_dets[: cfg.max_detections]:
                dets.append(ScoredBox(ex_id, d.box.to_xyxy(), d.score))
        if not gts:
            continue
        per_cat[category] = {}
        for thr in cfg.iou_thresholds:
            per_cat[category][thr] = average_precision(dets, gts, thr)
        p, r, _ = _pr_curve(dets, gts, 0.5)
        curves[category] = (p, r)
    if not per_cat:
        return {"ap": 0.0, "ap50": 0.0, "per_category": {}, "pr_curves": {}}
    ap50 = float(np.mean([v[0.5] for v in per_cat.values()]))
    ap = float(np.mean([np.mean(list(v.values())) for v in per_cat.values()]))
    table = {c: {"ap50": v[0.5], "ap": float(np.mean(list(v.values())))}
             for c, v in per_cat.items()}
    return {"ap": ap, "ap50": ap50, "per_category": table, "pr_curves": curves}


def detect_over_dataset(model: DetectionModel, examples: list[FederatedExample],
                        categories: list[str], threshold: float = 0.01,
                        top_k: int = 100, prompt_ensemble: bool = True) -> dict[str, list]:
    """Run text-queried detection over a split, all category names as the
    query set for every image."""
    qs = embed_text_queries(model, categories, mode="eval",
                            prompts_enabled=prompt_ensemble)
    out = {}
    for ex in examples:
        out[ex.example_id] = model.detect(ex.image, qs, threshold=threshold,
                                          top_k=top_k)
    return out


def evaluate_model(model: DetectionModel, examples: list[FederatedExample],
                   categories: list[str], held_out: list[str] | None = None,
                   cfg: EvalConfig = EvalConfig(), threshold: float = 0.01,
                   prompt_ensemble: bool = True) -> dict:
    dets = detect_over_dataset(model, examples, categories, threshold=threshold,
                               prompt_ensemble=prompt_ensemble)
    result = evaluate_detections(dets, examples, categories, cfg)
    if held_out:
        table = result["per_category"]
        rows = [table[c] for c in held_out if c in table]
        result["ap50_heldout"] = float(np.mean([r["ap50"] for r in rows])) if rows else 0.0
        result["ap_heldout"] = float(np.mean([r["ap"] for r in rows])) if rows else 0.0
    return result


# ------------------------------------------------------------- label splits


@dataclass(frozen=True)
class SplitSpec:
    held_out: tuple[str, ...] = ()
    n_splits: int = 1

    def splits(self, categories: list[str]) -> list[list[str]]:
        """Disjoint category splits for the one-shot protocol."""
        if self.held_out:
            return [list(self.held_out)]
        per = max(1, len(categories) // self.n_splits)
        return [categories[i * per:(i + 1) * per] for i in range(self.n_splits)]


def zero_shot_split(examples: list[FederatedExample], ss: SplitSpec
                    ) -> tuple[list[FederatedExample], list[FederatedExample]]:
    """(train view, eval view): the train view drops annotations whose label
    is held out (images are kept); the eval view is untouched."""
    train_view = remove_labels(examples, set(ss.held_out))
    return train_view, examples


# ------------------------------------------------------------ one-shot eval


def _patches_for_category(examples: list[FederatedExample], category: str
                          ) -> list[tuple[int, QueryPatch]]:
    out = []
    for idx, ex in enumerate(examples):
        for inst in ex.instances:
            if category in inst.labels and not inst.crowd:
                out.append((idx, QueryPatch(image=ex.image, box=inst.box)))
    return out


def one_shot_ap50(model: DetectionModel, examples: list[FederatedExample],
                  categories: list[str], k: int, rng: np.random.Generator,
                  threshold: float = 0.01, top_k: int = 30) -> dict:
    """Image-conditioned AP50 over the given categories.

    For each target image containing a category, k query patches of that
    category are sampled from other eval images, their extracted embeddings
    averaged, and the target scored with that single query.
    """
    per_cat_ap: dict[str, float] = {}
    fallback_count = 0
    query_count = 0
    for category in categories:
        pool = _patches_for_category(examples, category)
        if not pool:
            continue
        dets: list[ScoredBox] = []
        gts: dict[str, np.ndarray] = {}
        for tgt_idx, target in enumerate(examples):
            boxes = [inst.box.to_xyxy() for inst in target.instances
                     if category in inst.labels and not inst.crowd]
            if not boxes:
                continue  # protocol: targets contain at least one instance
            donors = [p for src, p in pool if src != tgt_idx]
            if not donors:
                continue
            picks = rng.choice(len(donors), size=min(k, len(donors)), replace=True)
            patches = [donors[int(i)] for i in picks]
            qs, flags = image_query_set(model, patches, name=category)
            fallback_count += sum(flags)
            query_count += len(flags)
            gts[target.example_id] = np.array(boxes)
            for d in model.detect(target.image, qs, threshold=threshold, top_k=top_k):
                dets.append(ScoredBox(target.example_id, d.box.to_xyxy(), d.score))
        if gts:
            per_cat_ap[category] = average_precision(dets, gts, 0.5)
    mean = float(np.mean(list(per_cat_ap.values()))) if per_cat_ap else 0.0
    return {"ap50": mean, "per_category": per_cat_ap,
            "fallback_rate": fallback_count / max(1, query_count)}


def one_shot_protocol(model: DetectionModel, examples: list[FederatedExample],
                      ss: SplitSpec, all_categories: list[str], k: int = 1,
                      seeds: tuple[int, ...] = (0, 1, 2)) -> dict:
    """CoAE-style protocol: per split, AP50 on unseen (held-out) categories
    and on the seen remainder, averaged over protocol seeds."""
    results = {"splits": [], "k": k}
    for split in ss.splits(all_categories):
        seen = [c for c in all_categories if c not in split]
        unseen_runs, seen_runs = [], []
        for seed in seeds:
            rng = np.random.default_rng(seed)
            unseen_runs.append(one_shot_ap50(model, examples, split, k, rng)["ap50"])
            rng = np.random.default_rng(seed + 1000)
            seen_runs.append(one_shot_ap50(model, examples, seen, k, rng)["ap50"]
                             if seen else 0.0)
        results["splits"].append({
            "unseen_categories": split,
            "ap50_unseen": float(np.mean(unseen_runs)),
            "ap50_seen": float(np.mean(seen_runs)),
            "per_seed_unseen": unseen_runs,
        })
    results["ap50_unseen_mean"] = float(np.mean([s["ap50_unseen"] for s in results["splits"]]))
    return results


# -------------------------------------------------------------------- output


def write_results_json(result: dict, path: str | Path):
    payload = {k: v for k, v in result.items() if k != "pr_curves"}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True),
                          encoding="utf-8")


def write_pr_csv(result: dict, path: str | Path):
    """Plot-ready PR curves at IoU 0.5, one (category, recall, precision)
    row per ranked detection."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["category", "recall", "precision"])
        for category, (precision, recall) in result.get("pr_curves", {}).items():
            for p, r in zip(precision, recall):
                writer.writerow([category, f"{r:.6f}", f"{p:.6f}"])
