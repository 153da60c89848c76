"""Query embeddings from text prompts or example image patches.

Text queries go through prompt templating (one random template per category
at training time, the seven-template ensemble at evaluation). Image queries
come from running detection on the patch's source image and picking, among
predictions overlapping the patch box, the class embedding most dissimilar
from the rest; the surrounding background predictions all resemble each
other, so the outlier is the foreground object.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ovdet.boxes import Box, iou_matrix
from ovdet.data.prompts import apply_prompt
from ovdet.errors import ConfigError
from ovdet.model import DetectionModel

FALLBACK_QUERY_TEXT = "an image of an object"


@dataclass
class QueryEntry:
    name: str
    embeddings: np.ndarray  # [P, D]; P > 1 for prompt ensembles
    origin: str = "text"  # "text" | "image"


@dataclass
class QuerySet:
    entries: list[QueryEntry] = field(default_factory=list)

    def __post_init__(self):
        if not self.entries:
            raise ConfigError("a query set cannot be empty")
        for e in self.entries:
            if not np.isfinite(e.embeddings).all():
                raise ConfigError(f"non-finite query embedding for {e.name!r}")

    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    def matrix_and_groups(self) -> tuple[np.ndarray, list[tuple[int, int]], list[str]]:
        """Stacked [sum P, D] embeddings plus per-entry row ranges."""
        mats, groups, names = [], [], []
        at = 0
        for e in self.entries:
            emb = np.atleast_2d(e.embeddings)
            mats.append(emb)
            groups.append((at, at + emb.shape[0]))
            at += emb.shape[0]
            names.append(e.name)
        return np.concatenate(mats, axis=0), groups, names


def embed_text_queries(model: DetectionModel, categories: list[str], mode: str,
                       rng: np.random.Generator | None = None,
                       prompts_enabled: bool = True) -> QuerySet:
    """One prompted embedding per category (train) or the 7-prompt ensemble
    (eval). Ensembling averages predicted probabilities at detect time."""
    if not categories:
        raise ConfigError("no categories to embed")
    entries = []
    texts: list[str] = []
    counts: list[int] = []
    for cat in categories:
        prompted = apply_prompt(cat, mode, rng=rng, enabled=prompts_enabled)
        group = [prompted] if isinstance(prompted, str) else list(prompted)
        texts.extend(group)
        counts.append(len(group))
    embs = model.encode_texts(texts).data
    at = 0
    for cat, n in zip(categories, counts):
        entries.append(QueryEntry(name=cat, embeddings=embs[at:at + n], origin="text"))
        at += n
    return QuerySet(entries)


def dissimilarity_scores(embeddings: np.ndarray) -> np.ndarray:
    """f(z_i) = sum_j z_i . z_j, self term included: low means outlier."""
    z = np.asarray(embeddings, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 1:
        raise ConfigError("need an [N, D] embedding matrix")
    return z @ z.sum(axis=0)


@dataclass(frozen=True)
class QueryPatch:
    image: np.ndarray
    box: Box


def extract_image_query(model: DetectionModel, qp: QueryPatch,
                        iou_min: float = 0.65) -> tuple[np.ndarray, bool]:
    """Class embedding representing the object in the query patch.

    Runs detection on the source image, keeps predictions whose box overlaps
    the patch box with IoU > ``iou_min``, and returns the most dissimilar
    class embedding among them (argmin of f, lowest index on ties). With no
    overlapping prediction the text embedding of a generic object phrase is
    returned and the fallback flag set.
    """
    from ovdet.boxes import cxcywh_to_xyxy

    boxes, embs = model.token_predictions(qp.image)
    boxes, embs = boxes[0], embs[0]
    ious = iou_matrix(np.array([qp.box.to_xyxy()]), cxcywh_to_xyxy(boxes))[0]
    candidates = np.nonzero(ious > iou_min)[0]
    if candidates.size == 0:
        emb = model.encode_texts([FALLBACK_QUERY_TEXT]).data[0]
        return emb, True
    scores = dissimilarity_scores(embs[candidates])
    pick = candidates[int(np.argmin(scores))]  # argmin takes the lowest index on ties
    return embs[pick], False


def fewshot_average(embeddings: list[np.ndarray] | np.ndarray) -> np.ndarray:
    """Arithmetic mean of query embeddings, L2-normalized."""
    arr = np.asarray(embeddings, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.shape[0] == 0:
        raise ConfigError("cannot average an empty embedding list")
    mean = arr.mean(axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        raise ValueError("averaged embedding has zero norm")
    return mean / norm


def image_query_set(model: DetectionModel, patches: list[QueryPatch], name: str,
                    iou_min: float = 0.65) -> tuple[QuerySet, list[bool]]:
    """k-shot image conditioning: extract per-patch embeddings and average."""
    embs, flags = [], []
    for qp in patches:
        emb, flag = extract_image_query(model, qp, iou_min)
        embs.append(emb)
        flags.append(flag)
    pooled = fewshot_average(embs)
    return QuerySet([QueryEntry(name=name, embeddings=pooled[None, :],
                                origin="image")]), flags
