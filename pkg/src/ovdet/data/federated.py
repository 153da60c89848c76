"""Federated detection examples and their JSON dataset format.

Each image carries box instances (possibly multi-label), a set of categories
verified present (positives), and a set verified absent (negatives); every
other category's status is unknown. Datasets are one JSON document per split
with images referenced by file path or inlined as base64 PNG.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from PIL import Image

from ovdet.boxes import Box
from ovdet.errors import DataError


@dataclass(frozen=True)
class Instance:
    box: Box
    labels: frozenset[str]
    crowd: bool = False

    def sorted_labels(self) -> list[str]:
        return sorted(self.labels)


@dataclass
class FederatedExample:
    image: np.ndarray  # [H, W, C] floats in [0, 1]
    instances: list[Instance] = field(default_factory=list)
    positive: set[str] = field(default_factory=set)
    negative: set[str] = field(default_factory=set)
    example_id: str = ""


def validate_example(ex: FederatedExample, atol: float = 1e-6):
    if ex.image.ndim != 3:
        raise DataError("image must be [H, W, C]")
    if ex.image.min() < -atol or ex.image.max() > 1.0 + atol:
        raise DataError("image values must lie in [0, 1]")
    if ex.positive & ex.negative:
        raise DataError(f"positive/negative overlap: {sorted(ex.positive & ex.negative)}")
    for inst in ex.instances:
        if not inst.labels:
            raise DataError("instance without labels")
        if not inst.labels <= ex.positive:
            raise DataError(f"instance labels {sorted(inst.labels)} not all in positives")
        x0, y0, x1, y1 = inst.box.to_xyxy()
        if x0 < -atol or y0 < -atol or x1 > 1.0 + atol or y1 > 1.0 + atol:
            raise DataError(f"box out of bounds: {inst.box}")


def remove_labels(examples: list[FederatedExample],
                  held_out: set[str]) -> list[FederatedExample]:
    """Strip every annotation carrying a held-out label, keeping the images.

    Instances lose held-out labels (dropped entirely if nothing remains);
    held-out categories leave both the positive and the negative lists, so
    the split provides no supervision about them at all.
    """
    held_out = set(held_out)
    out = []
    for ex in examples:
        instances = []
        for inst in ex.instances:
            kept = inst.labels - held_out
            if kept:
                instances.append(replace(inst, labels=frozenset(kept)))
        out.append(FederatedExample(
            image=ex.image,
            instances=instances,
            positive=set().union(*[i.labels for i in instances]) if instances else set(),
            negative=ex.negative - held_out,
            example_id=ex.example_id,
        ))
    return out


def max_instances(examples: list[FederatedExample]) -> int:
    return max((len(ex.instances) for ex in examples), default=0)


# ------------------------------------------------------------------ image IO


def image_to_png_bytes(image: np.ndarray) -> bytes:
    arr = np.clip(np.asarray(image) * 255.0 + 0.5, 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def png_bytes_to_image(data: bytes) -> np.ndarray:
    with Image.open(io.BytesIO(data)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


# ---------------------------------------------------------------- JSON split


def _instance_to_json(inst: Instance) -> dict:
    d = {"bbox": list(inst.box.to_xyxy()), "labels": inst.sorted_labels()}
    if inst.crowd:
        d["crowd"] = True
    return d


def _instance_from_json(d: dict) -> Instance:
    x0, y0, x1, y1 = d["bbox"]
    return Instance(box=Box.from_xyxy(x0, y0, x1, y1),
                    labels=frozenset(d["labels"]),
                    crowd=bool(d.get("crowd", False)))


def save_dataset(examples: list[FederatedExample], path: str | Path,
                 categories: list[str] | None = None,
                 image_dir: str | Path | None = None):
    """Write one split. With ``image_dir`` images go to PNG files; otherwise
    they are inlined as base64 PNG under the "pixels" key."""
    path = Path(path)
    images_json = []
    for i, ex in enumerate(examples):
        ex_id = ex.example_id or f"img{i:05d}"
        h, w = ex.image.shape[:2]
        entry = {
            "id": ex_id,
            "width": w,
            "height": h,
            "instances": [_instance_to_json(inst) for inst in ex.instances],
            "positive": sorted(ex.positive),
            "negative": sorted(ex.negative),
        }
        png = image_to_png_bytes(ex.image)
        if image_dir is not None:
            image_dir = Path(image_dir)
            image_dir.mkdir(parents=True, exist_ok=True)
            fname = f"{ex_id}.png"
            (image_dir / fname).write_bytes(png)
            entry["file"] = str((image_dir / fname).resolve())
        else:
            entry["pixels"] = base64.b64encode(png).decode("ascii")
        images_json.append(entry)
    if categories is None:
        cats: set[str] = set()
        for ex in examples:
            cats |= ex.positive | ex.negative
        categories = sorted(cats)
    doc = {"categories": list(categories), "images": images_json}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc), encoding="utf-8")


def load_dataset(path: str | Path) -> tuple[list[FederatedExample], list[str]]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    examples = []
    for entry in doc["images"]:
        if "pixels" in entry:
            image = png_bytes_to_image(base64.b64decode(entry["pixels"]))
        elif "file" in entry:
            image = png_bytes_to_image(Path(entry["file"]).read_bytes())
        else:
            raise DataError(f"image entry {entry.get('id')} has neither file nor pixels")
        ex = FederatedExample(
            image=image,
            instances=[_instance_from_json(d) for d in entry.get("instances", [])],
            positive=set(entry.get("positive", [])),
            negative=set(entry.get("negative", [])),
            example_id=str(entry.get("id", "")),
        )
        validate_example(ex)
        examples.append(ex)
    return examples, list(doc.get("categories", []))
