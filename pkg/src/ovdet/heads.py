"""Per-token detection heads: class embeddings, logit calibration, boxes.

Each image token yields one candidate detection. Class logits are cosine
similarities between the token's projected embedding and arbitrary query
embeddings, passed through a per-token learned scale and shift so the focal
sigmoid loss sees a usable dynamic range. Box regression decodes through a
sigmoid around a per-token prior centered on the token's image patch.
"""

from __future__ import annotations

import math

import numpy as np

from ovdet.configs import EncoderConfig, ModelConfig
from ovdet.errors import ConfigError
from ovdet.nn.layers import init_linear, linear
from ovdet.nn.params import ParamStore
from ovdet.nn.tensor import Tensor, gelu, l2_normalize, sigmoid, softplus

SCALE_FLOOR = 1e-6
_SHIFT_INIT = -2.0  # start near 12% positive probability
_SCALE_RAW_INIT = math.log(math.e - 1.0)  # softplus(raw) == 1


def init_detection_head(store: ParamStore, rng: np.random.Generator, cfg: EncoderConfig,
                        prefix: str = "head"):
    d = cfg.width
    init_linear(store, rng, f"{prefix}.cls", d, d)
    init_linear(store, rng, f"{prefix}.scale", d, 1, std=0.01)
    init_linear(store, rng, f"{prefix}.shift", d, 1, std=0.01)
    store[f"{prefix}.scale.b"].data = store[f"{prefix}.scale.b"].data + _SCALE_RAW_INIT
    store[f"{prefix}.shift.b"].data = store[f"{prefix}.shift.b"].data + _SHIFT_INIT
    init_linear(store, rng, f"{prefix}.box1", d, d)
    init_linear(store, rng, f"{prefix}.box2", d, d)
    # zero init: training starts from the tiled location prior
    init_linear(store, rng, f"{prefix}.box3", d, 4, zero=True)


def project_class_embeddings(store: ParamStore, tokens: Tensor,
                             prefix: str = "head") -> tuple[Tensor, Tensor, Tensor]:
    """Tokens [..., T, D] -> (class embeddings, logit scale > 0, logit shift)."""
    emb = linear(store, f"{prefix}.cls", tokens)
    scale = softplus(linear(store, f"{prefix}.scale", tokens)) + SCALE_FLOOR
    shift = linear(store, f"{prefix}.shift", tokens)
    return emb, scale, shift


def box_bias(grid: int, location_bias: bool = True, size_bias: bool = True) -> np.ndarray | None:
    """Per-token logit-space box prior [T, 4]; None when disabled entirely.

    Centers enumerate ((col+0.5)/G, (row+0.5)/G) in raster order; sizes are
    biased toward one patch (1/G). Boundary values are clamped before logit.
    """
    if not location_bias:
        return None

    def logit(p: np.ndarray) -> np.ndarray:
        p = np.clip(p, 1e-4, 1.0 - 1e-4)
        return np.log(p / (1.0 - p))

    rows, cols = np.divmod(np.arange(grid * grid), grid)
    cx = (cols + 0.5) / grid
    cy = (rows + 0.5) / grid
    wh = np.full(grid * grid, 1.0 / grid if size_bias else 0.5)
    return logit(np.stack([cx, cy, wh, wh], axis=-1))


def predict_boxes(store: ParamStore, tokens: Tensor, grid: int,
                  bias: np.ndarray | None, prefix: str = "head") -> Tensor:
    """Tokens [..., T, D] -> boxes [..., T, 4] in normalized cxcywh."""
    if tokens.shape[-2] != grid * grid:
        raise ConfigError("token count does not match the grid")
    h = gelu(linear(store, f"{prefix}.box1", tokens))
    h = gelu(linear(store, f"{prefix}.box2", h))
    raw = linear(store, f"{prefix}.box3", h)
    if bias is not None:
        raw = raw + bias
    return sigmoid(raw)


def query_logits(class_embs: Tensor, scale: Tensor, shift: Tensor, queries) -> Tensor:
    """Cosine-similarity logits [..., T, Q] against L2-normalized queries.

    The scoring path is identical for text- and image-derived queries; there
    is no fusion, so each query column is independent of the others.
    """
    q = queries if isinstance(queries, Tensor) else Tensor(np.asarray(queries))
    if q.ndim != 2 or q.shape[0] < 1:
        raise ConfigError("queries must be a nonempty [Q, D] array")
    sims = l2_normalize(class_embs) @ l2_normalize(q).swapaxes(-1, -2)
    return sims * scale + shift


def full_forward(store: ParamStore, model_cfg: ModelConfig, images,
                 train: bool = False, rng: np.random.Generator | None = None):
    """Encode images and run both heads; returns (boxes, class embs, scale, shift)."""
    from ovdet.encoders import encode_image

    cfg = model_cfg.encoder
    tokens = encode_image(store, cfg, images, train=train, rng=rng)
    emb, scale, shift = project_class_embeddings(store, tokens)
    bias = box_bias(cfg.grid, model_cfg.location_bias, model_cfg.size_bias)
    boxes = predict_boxes(store, tokens, cfg.grid, bias)
    return boxes, emb, scale, shift
