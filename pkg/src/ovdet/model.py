"""Detection model facade: parameters + config + vocabulary in one handle.

Construction paths mirror the two-stage recipe: ``from_pretrained`` takes a
contrastively trained encoder store, drops the attention-pooling head and
temperature (they exist only for pre-training), adapts position embeddings
if the detection resolution differs, and attaches freshly initialized
detection heads. ``from_scratch`` skips the first stage (control runs).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ovdet.configs import EncoderConfig, ModelConfig
from ovdet.boxes import Box
from ovdet.encoders import (
    encode_image,
    encode_text,
    init_image_tower,
    init_text_tower,
    interpolate_pos_embed,
)
from ovdet.errors import ConfigError
from ovdet.heads import (
    box_bias,
    init_detection_head,
    predict_boxes,
    project_class_embeddings,
    query_logits,
)
from ovdet.nn.params import ParamStore
from ovdet.nn.tensor import Tensor, no_grad, sigmoid
from ovdet.tokenizer import Vocabulary

PRETRAIN_ONLY_PREFIXES = ("map.", "temp.")


@dataclass(frozen=True)
class Detection:
    box: Box
    score: float
    query_index: int
    query_name: str


class DetectionModel:
    def __init__(self, params: ParamStore, cfg: ModelConfig, vocab: Vocabulary):
        self.params = params
        self.cfg = cfg
        self.vocab = vocab
        self._bias = box_bias(cfg.encoder.grid, cfg.location_bias, cfg.size_bias)

    # ------------------------------------------------------------ builders

    @staticmethod
    def from_scratch(cfg: ModelConfig, vocab: Vocabulary, seed: int = 0) -> "DetectionModel":
        enc = cfg.encoder
        if enc.text_vocab != len(vocab):
            enc = EncoderConfig(**{**enc.__dict__, "text_vocab": len(vocab)})
            cfg = ModelConfig(encoder=enc, location_bias=cfg.location_bias,
                              size_bias=cfg.size_bias)
        rng = np.random.default_rng(seed)
        store = ParamStore()
        init_image_tower(store, rng, enc)
        init_text_tower(store, rng, enc)
        init_detection_head(store, rng, enc)
        return DetectionModel(store, cfg, vocab)

    @staticmethod
    def from_pretrained(pretrained: ParamStore, pretrain_cfg: EncoderConfig,
                        cfg: ModelConfig, vocab: Vocabulary,
                        seed: int = 0) -> "DetectionModel":
        """Transfer encoder weights; attach fresh heads; drop the MAP head."""
        enc = cfg.encoder
        if enc.text_vocab != pretrain_cfg.text_vocab:
            raise ConfigError("detection config must keep the pre-training vocabulary")
        store = ParamStore()
        for name, t in pretrained.items():
            if any(name.startswith(p) for p in PRETRAIN_ONLY_PREFIXES):
                continue  # attention pooling + temperature are pre-training only
            store[name] = Tensor(t.data.copy(), requires_grad=True)
        if pretrain_cfg.grid != enc.grid:
            store["img.pos"] = Tensor(
                interpolate_pos_embed(store["img.pos"].data, pretrain_cfg.grid, enc.grid),
                requires_grad=True)
        rng = np.random.default_rng(seed)
        init_detection_head(store, rng, enc)
        return DetectionModel(store, cfg, vocab)

    # ------------------------------------------------------------- forward

    def forward(self, images, train: bool = False,
                rng: np.random.Generator | None = None):
        """Full per-token forward: (boxes, class embs, logit scale, shift)."""
        enc = self.cfg.encoder
        tokens = encode_image(self.params, enc, images, train=train, rng=rng)
        emb, scale, shift = project_class_embeddings(self.params, tokens)
        boxes = predict_boxes(self.params, tokens, enc.grid, self._bias)
        return boxes, emb, scale, shift

    def encode_texts(self, texts: list[str], train: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        ids = [self.vocab.encode(t, self.cfg.encoder.text_max_len) for t in texts]
        return encode_text(self.params, self.cfg.encoder, ids, train=train, rng=rng)

    # ----------------------------------------------------------- inference

    def token_predictions(self, images) -> tuple[np.ndarray, np.ndarray]:
        """Eval-mode boxes [B,T,4] and class embeddings [B,T,D], no queries."""
        with no_grad():
            boxes, emb, _, _ = self.forward(images)
        return boxes.data, emb.data

    def probabilities(self, images, query_matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Eval-mode forward; returns (boxes [B,T,4], probs [B,T,Q], embs)."""
        with no_grad():
            boxes, emb, scale, shift = self.forward(images)
            logits = query_logits(emb, scale, shift, query_matrix)
            probs = sigmoid(logits)
        return boxes.data, probs.data, emb.data

    def detect(self, image, queries, threshold: float = 0.0, top_k: int = 100,
               query_names: list[str] | None = None) -> list[Detection]:
        """Score one image against a query set; no non-maximum suppression.

        ``queries`` is a QuerySet (prompt groups are probability-averaged)
        or a raw [Q, D] embedding matrix. Emits every (box, query) pair at
        or above ``threshold``, best-first, truncated to ``top_k``.
        """
        from ovdet.queries import QuerySet

        if isinstance(queries, QuerySet):
            matrix, groups, names = queries.matrix_and_groups()
        else:
            matrix = np.asarray(queries, dtype=np.float64)
            if matrix.ndim != 2 or matrix.shape[0] == 0:
                raise ConfigError("detect needs at least one query")
            groups = [(i, i + 1) for i in range(matrix.shape[0])]
            names = query_names or [f"query{i}" for i in range(matrix.shape[0])]
        boxes, probs, _ = self.probabilities(image, matrix)
        boxes, probs = boxes[0], probs[0]
        # prompt ensembling: mean predicted probability within each group
        grouped = np.stack([probs[:, a:b].mean(axis=1) for a, b in groups], axis=1)
        t_count, q_count = grouped.shape
        order = np.argsort(-grouped, axis=None, kind="stable")
        out: list[Detection] = []
        for flat in order:
            tok, q = divmod(int(flat), q_count)
            score = float(grouped[tok, q])
            if score < threshold or len(out) >= top_k:
                break
            out.append(Detection(box=Box(*boxes[tok].tolist()), score=score,
                                 query_index=q, query_name=names[q]))
        return out

    # --------------------------------------------------------------- misc

    def trainable(self) -> ParamStore:
        return self.params

    def text_params(self) -> ParamStore:
        return self.params.subset(lambda n: n.startswith("txt."))

    def non_text_params(self) -> ParamStore:
        return self.params.subset(lambda n: not n.startswith("txt."))
