"""Synthetic colored-shape scenes: the desk-scale training corpus.

Images show 1-4 solid shapes (circle / square / triangle / cross) on a noisy
gray background; labels are "{color} {shape}" strings with exact boxes from
the generating geometry. Each image also gets a caption listing its objects,
which yields the (image, text) pairs for contrastive pre-training. A list of
held-out labels is stripped from the detection training split only; captions
and the eval split keep them, so held-out performance measures transfer from
image-level supervision.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ovdet.boxes import Box
from ovdet.data.federated import FederatedExample, Instance, remove_labels
from ovdet.errors import ConfigError

PALETTE: dict[str, tuple[float, float, float]] = {
    "red": (0.85, 0.10, 0.10),
    "green": (0.10, 0.72, 0.15),
    "blue": (0.15, 0.25, 0.90),
    "yellow": (0.88, 0.82, 0.10),
    "purple": (0.62, 0.15, 0.80),
    "orange": (0.95, 0.55, 0.08),
}

SHAPES = ("circle", "square", "triangle", "cross")


@dataclass(frozen=True)
class SynthSpec:
    colors: tuple[str, ...] = ("red", "green", "blue", "yellow")
    shapes: tuple[str, ...] = SHAPES
    image_size: int = 48
    n_train: int = 512
    n_eval: int = 128
    held_out: tuple[str, ...] = ()
    max_objects: int = 4
    n_real_negatives: int = 3
    crowd_prob: float = 0.0
    min_radius: float = 0.10  # fraction of image size
    max_radius: float = 0.18
    eval_full_negatives: bool = True  # eval split: every absent category is a verdict
    # multi-label mode: instances also carry their color and shape words as
    # labels ("red triangle" + "red" + "triangle"), the way federated datasets
    # attach several non-disjoint names to one object. Held-out removal still
    # matches exact label strings only, so combo hold-outs stay zero-shot.
    atomic_labels: bool = False

    def __post_init__(self):
        unknown = set(self.colors) - set(PALETTE)
        if unknown:
            raise ConfigError(f"no palette entry for {sorted(unknown)}")
        if set(self.shapes) - set(SHAPES):
            raise ConfigError("unknown shape name")
        n_cats = len(self.colors) * len(self.shapes)
        if n_cats < len(self.held_out) + 4:
            raise ConfigError("vocabulary too small for the requested hold-out")
        if not set(self.held_out) <= set(self.categories()):
            raise ConfigError("held-out labels must be valid categories")

    def categories(self) -> list[str]:
        combos = [f"{c} {s}" for c in self.colors for s in self.shapes]
        atoms = list(self.colors) + list(self.shapes) if self.atomic_labels else []
        return sorted(combos + atoms)

    def combo_categories(self) -> list[str]:
        return sorted(f"{c} {s}" for c in self.colors for s in self.shapes)


@dataclass
class SynthData:
    train: list[FederatedExample]
    eval: list[FederatedExample]
    train_captions: list[tuple[np.ndarray, str]]
    eval_captions: list[tuple[np.ndarray, str]]
    categories: list[str] = field(default_factory=list)
    held_out: list[str] = field(default_factory=list)


def _shape_mask(shape: str, size: int, cx: float, cy: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    if shape == "circle":
        return (xx - cx) ** 2 + (yy - cy) ** 2 <= r ** 2
    if shape == "square":
        return (np.abs(xx - cx) <= r) & (np.abs(yy - cy) <= r)
    if shape == "triangle":
        # apex up: width grows linearly from the apex to the base
        rel = (yy - (cy - r)) / (2.0 * r)
        return (rel >= 0) & (rel <= 1) & (np.abs(xx - cx) <= r * rel)
    if shape == "cross":
        arm = r / 3.0
        horiz = (np.abs(yy - cy) <= arm) & (np.abs(xx - cx) <= r)
        vert = (np.abs(xx - cx) <= arm) & (np.abs(yy - cy) <= r)
        return horiz | vert
    raise ConfigError(f"unknown shape {shape!r}")


def render_scene(spec: SynthSpec, rng: np.random.Generator
                 ) -> tuple[np.ndarray, list[Instance]]:
    size = spec.image_size
    image = np.clip(0.5 + rng.normal(0.0, 0.08, (size, size, 3)), 0.0, 1.0)
    n_objects = int(rng.integers(1, spec.max_objects + 1))
    instances: list[Instance] = []
    placed: list[tuple[float, float, float]] = []
    for _ in range(n_objects):
        for _attempt in range(30):
            r = rng.uniform(spec.min_radius, spec.max_radius) * size
            cx = rng.uniform(r + 1, size - r - 1)
            cy = rng.uniform(r + 1, size - r - 1)
            if all((cx - ox) ** 2 + (cy - oy) ** 2 >= (r + orr + 2) ** 2
                   for ox, oy, orr in placed):
                break
        else:
            continue
        placed.append((cx, cy, r))
        color = spec.colors[int(rng.integers(len(spec.colors)))]
        shape = spec.shapes[int(rng.integers(len(spec.shapes)))]
        mask = _shape_mask(shape, size, cx, cy, r)
        rgb = np.asarray(PALETTE[color]) + rng.normal(0.0, 0.02, 3)
        image[mask] = np.clip(rgb, 0.0, 1.0)
        box = Box(cx / size, cy / size, 2 * r / size, 2 * r / size)
        labels = {f"{color} {shape}"}
        if spec.atomic_labels:
            labels |= {color, shape}
        instances.append(Instance(box=box, labels=frozenset(labels)))
    return image, instances


def caption_for(instances: list[Instance]) -> str:
    # captions list full object names; atomic side labels stay annotation-only
    labels = sorted({label for inst in instances for label in inst.labels
                     if " " in label})
    return " and ".join(f"a {label}" for label in labels)


def _make_example(spec: SynthSpec, rng: np.random.Generator, all_cats: list[str],
                  index: int, split: str) -> tuple[FederatedExample, str]:
    image, instances = render_scene(spec, rng)
    while not instances:  # a scene must contain at least one object
        image, instances = render_scene(spec, rng)
    caption = caption_for(instances)
    positive = {label for inst in instances for label in inst.labels}
    absent = [c for c in all_cats if c not in positive]
    if split == "eval" and spec.eval_full_negatives:
        negative = set(absent)
    else:
        k = min(spec.n_real_negatives, len(absent))
        negative = set(rng.choice(absent, size=k, replace=False)) if k else set()
    if spec.crowd_prob > 0 and len(instances) >= 2 and rng.random() < spec.crowd_prob:
        # group box over two objects, crowd-flagged (noisy-supervision path)
        a, b = instances[0].box.to_xyxy(), instances[1].box.to_xyxy()
        hull = Box.from_xyxy(min(a[0], b[0]), min(a[1], b[1]),
                             max(a[2], b[2]), max(a[3], b[3]))
        labels = instances[0].labels | instances[1].labels
        instances = instances + [Instance(box=hull, labels=frozenset(labels), crowd=True)]
    ex = FederatedExample(image=image, instances=instances, positive=positive,
                          negative=negative, example_id=f"{split}{index:05d}")
    return ex, caption


def synth_dataset(spec: SynthSpec, rng: np.random.Generator) -> SynthData:
    all_cats = spec.categories()
    train, train_caps = [], []
    for i in range(spec.n_train):
        ex, caption = _make_example(spec, rng, all_cats, i, "train")
        train.append(ex)
        train_caps.append((ex.image, caption))
    eval_examples, eval_caps = [], []
    for i in range(spec.n_eval):
        ex, caption = _make_example(spec, rng, all_cats, i, "eval")
        eval_examples.append(ex)
        eval_caps.append((ex.image, caption))
    held = set(spec.held_out)
    if held:
        train = remove_labels(train, held)
    return SynthData(train=train, eval=eval_examples,
                     train_captions=train_caps, eval_captions=eval_caps,
                     categories=all_cats, held_out=sorted(held))
