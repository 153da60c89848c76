"""Image/label augmentations for detection fine-tuning.

Pipeline order per training example: merge near-duplicate instances, random
square crop (dropping boxes that lose too much area), then tile k**2 cropped
examples into a mosaic for scale augmentation. All stages are pure functions
of (input, rng state).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ovdet.boxes import Box, iou_matrix
from ovdet.data.federated import FederatedExample, Instance
from ovdet.errors import ConfigError

GRAY = 0.5


@dataclass(frozen=True)
class CropConstraints:
    aspect_min: float = 0.75
    aspect_max: float = 1.33
    area_min: float = 0.33
    area_max: float = 1.0
    retention: float = 0.6  # keep a box only if this fraction of its area survives
    attempts: int = 100


def merge_instances(instances: list[Instance], iou_threshold: float = 0.9,
                    rng: np.random.Generator | None = None) -> list[Instance]:
    """Collapse near-duplicate boxes into single multi-label instances.

    Repeatedly takes the pair with the largest overlap; if its IoU clears the
    threshold, their label sets merge and one of the two boxes is kept
    uniformly at random. Never increases the count, never drops a label.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    current = list(instances)
    while len(current) >= 2:
        xyxy = np.array([inst.box.to_xyxy() for inst in current])
        ious = iou_matrix(xyxy, xyxy)
        np.fill_diagonal(ious, -1.0)
        i, j = np.unravel_index(int(np.argmax(ious)), ious.shape)
        if ious[i, j] < iou_threshold:
            break
        a, b = current[i], current[j]
        keep_box = a.box if rng.random() < 0.5 else b.box
        merged = Instance(box=keep_box, labels=a.labels | b.labels,
                          crowd=a.crowd or b.crowd)
        current = [inst for k, inst in enumerate(current) if k not in (i, j)]
        current.append(merged)
    return current


def _pad_to_square(image: np.ndarray) -> np.ndarray:
    h, w = image.shape[:2]
    side = max(h, w)
    if h == w:
        return image
    out = np.full((side, side, image.shape[2]), GRAY, dtype=image.dtype)
    out[:h, :w] = image  # pad at the bottom or right edge
    return out


def crop_example(ex: FederatedExample, x0: int, y0: int, cw: int, ch: int,
                 retention: float) -> FederatedExample:
    """Apply one explicit crop window, then gray-pad to square.

    Boxes are clipped to the crop; instances retaining less than
    ``retention`` of their original area are dropped (retention 0 keeps
    every box that still overlaps the crop). Categories whose instances all
    vanish become unknown rather than negative.
    """
    h, w = ex.image.shape[:2]
    patch = ex.image[y0:y0 + ch, x0:x0 + cw]
    side = max(cw, ch)
    image = _pad_to_square(patch)

    instances = []
    for inst in ex.instances:
        bx0, by0, bx1, by1 = inst.box.to_xyxy()
        # to pixel space, intersect with the crop window
        px0, py0, px1, py1 = bx0 * w, by0 * h, bx1 * w, by1 * h
        ix0, iy0 = max(px0, x0), max(py0, y0)
        ix1, iy1 = min(px1, x0 + cw), min(py1, y0 + ch)
        iw, ih = ix1 - ix0, iy1 - iy0
        if iw <= 0 or ih <= 0:
            continue
        retained = (iw * ih) / max((px1 - px0) * (py1 - py0), 1e-12)
        if retained < retention:
            continue
        instances.append(replace(inst, box=Box.from_xyxy(
            (ix0 - x0) / side, (iy0 - y0) / side,
            (ix1 - x0) / side, (iy1 - y0) / side)))
    positive = set().union(*[i.labels for i in instances]) if instances else set()
    return FederatedExample(image=image, instances=instances, positive=positive,
                            negative=set(ex.negative), example_id=ex.example_id)


def random_crop(ex: FederatedExample, cc: CropConstraints = CropConstraints(),
                rng: np.random.Generator | None = None) -> FederatedExample:
    """Random crop under aspect/area constraints (rejection sampling with a
    full-image fallback), clipping and filtering boxes per ``cc.retention``."""
    if rng is None:
        rng = np.random.default_rng(0)
    h, w = ex.image.shape[:2]
    if h == 0 or w == 0:
        raise ConfigError("cannot crop an empty image")
    crop = None
    for _ in range(cc.attempts):
        aspect = rng.uniform(cc.aspect_min, cc.aspect_max)
        area = rng.uniform(cc.area_min, cc.area_max) * h * w
        cw = int(round(np.sqrt(area * aspect)))
        ch = int(round(np.sqrt(area / aspect)))
        if 1 <= cw <= w and 1 <= ch <= h:
            x0 = int(rng.integers(0, w - cw + 1))
            y0 = int(rng.integers(0, h - ch + 1))
            crop = (x0, y0, cw, ch)
            break
    if crop is None:
        crop = (0, 0, w, h)
    return crop_example(ex, *crop, retention=cc.retention)


def resize_image(image: np.ndarray, out_size: int) -> np.ndarray:
    """Area-mean downscale when the factor is integral, else bilinear."""
    h, w = image.shape[:2]
    if h != w:
        raise ConfigError("resize_image expects square input")
    if h == out_size:
        return image.copy()
    if h % out_size == 0:
        f = h // out_size
        return image.reshape(out_size, f, out_size, f, -1).mean(axis=(1, 3))
    coords = (np.arange(out_size) + 0.5) * (h / out_size) - 0.5
    coords = np.clip(coords, 0, h - 1)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, h - 1)
    frac = coords - lo
    rows = image[lo] * (1 - frac)[:, None, None] + image[hi] * frac[:, None, None]
    return rows[:, lo] * (1 - frac)[None, :, None] + rows[:, hi] * frac[None, :, None]


def build_mosaic(examples: list[FederatedExample], k: int,
                 target_size: int) -> FederatedExample:
    """Tile k*k downscaled examples into one image of ``target_size``.

    Boxes shrink by 1/k and shift by their tile origin. Positives are the
    union over tiles; a category counts as negative only when it is negative
    in every tile and positive in none, the sole rule consistent with
    federated semantics.
    """
    if len(examples) != k * k:
        raise ConfigError(f"mosaic of grid {k} needs {k * k} examples")
    if target_size % k != 0:
        raise ConfigError("target_size must divide evenly into the grid")
    tile = target_size // k
    image = np.empty((target_size, target_size, examples[0].image.shape[2]),
                     dtype=np.float64)
    instances: list[Instance] = []
    positive: set[str] = set()
    for idx, ex in enumerate(examples):
        row, col = divmod(idx, k)
        image[row * tile:(row + 1) * tile, col * tile:(col + 1) * tile] = \
            resize_image(ex.image, tile)
        for inst in ex.instances:
            b = inst.box
            instances.append(replace(inst, box=Box(
                (b.cx + col) / k, (b.cy + row) / k, b.w / k, b.h / k)))
        positive |= ex.positive
    negative = set.intersection(*[ex.negative for ex in examples]) - positive \
        if examples else set()
    ids = ",".join(ex.example_id for ex in examples if ex.example_id)
    return FederatedExample(image=image, instances=instances, positive=positive,
                            negative=negative, example_id=f"mosaic({ids})")
