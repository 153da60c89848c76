"""Image and text Transformer towers plus the contrastive objective.

The image tower patchifies, adds learned 2D position embeddings, and runs
pre-LN blocks; tokens come out unpooled so the detection heads can attach
per token. For pre-training only, a learned probe token attention-pools the
sequence (MAP) and both towers project into a shared embedding space where
a symmetric InfoNCE loss with a learnable temperature aligns matched pairs.
"""

from __future__ import annotations

import math

import numpy as np

from ovdet.configs import EncoderConfig
from ovdet.errors import ConfigError, DataError
from ovdet.nn.layers import (
    apply_layer_norm,
    attention,
    init_attention,
    init_block,
    init_layer_norm,
    init_linear,
    linear,
    transformer_block,
)
from ovdet.nn.params import ParamStore
from ovdet.nn.tensor import Tensor, l2_normalize, logsumexp, maximum, minimum
from ovdet.tokenizer import EOS_ID, PAD_ID

LOG_TAU_INIT = math.log(1.0 / 0.07)
LOG_TAU_RANGE = 5.0


# ------------------------------------------------------------------ patching


def patchify(image, patch_size: int):
    """[H, W, C] (or [B, H, W, C]) -> [G*G, P*P*C] tokens in raster order,
    top-left patch first. Pure rearrangement, hence lossless."""
    x = image if isinstance(image, Tensor) else Tensor(image)
    batched = x.ndim == 4
    if not batched and x.ndim != 3:
        raise ConfigError("patchify expects [H, W, C] or [B, H, W, C]")
    h, w, c = x.shape[-3:]
    if h != w:
        raise ConfigError("images must be square")
    if h % patch_size != 0:
        raise ConfigError(f"image size {h} not divisible by patch size {patch_size}")
    g = h // patch_size
    p = patch_size
    if batched:
        b = x.shape[0]
        x = x.reshape(b, g, p, g, p, c).transpose((0, 1, 3, 2, 4, 5))
        return x.reshape(b, g * g, p * p * c)
    x = x.reshape(g, p, g, p, c).transpose((0, 2, 1, 3, 4))
    return x.reshape(g * g, p * p * c)


def unpatchify(tokens, patch_size: int, channels: int = 3):
    """Inverse of :func:`patchify` for a single image."""
    t = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    n = t.shape[0]
    g = int(round(math.sqrt(n)))
    p = patch_size
    x = t.reshape(g, g, p, p, channels).transpose((0, 2, 1, 3, 4))
    return x.reshape(g * p, g * p, channels)


# ------------------------------------------------------------------- params


def init_image_tower(store: ParamStore, rng: np.random.Generator, cfg: EncoderConfig,
                     prefix: str = "img"):
    d = cfg.width
    init_linear(store, rng, f"{prefix}.patch", cfg.patch_size ** 2 * cfg.channels, d)
    store[f"{prefix}.pos"] = Tensor(rng.normal(0.0, 0.02, (cfg.n_tokens, d)),
                                    requires_grad=True)
    for i in range(cfg.depth):
        init_block(store, rng, f"{prefix}.block{i}", d, cfg.mlp_dim)


def init_text_tower(store: ParamStore, rng: np.random.Generator, cfg: EncoderConfig,
                    prefix: str = "txt"):
    d = cfg.width
    if cfg.text_vocab < 3:
        raise ConfigError("text_vocab must cover the reserved PAD/EOS/UNK ids")
    store[f"{prefix}.tok"] = Tensor(rng.normal(0.0, 0.02, (cfg.text_vocab, d)),
                                    requires_grad=True)
    store[f"{prefix}.pos"] = Tensor(rng.normal(0.0, 0.02, (cfg.text_max_len, d)),
                                    requires_grad=True)
    for i in range(cfg.depth):
        init_block(store, rng, f"{prefix}.block{i}", d, cfg.mlp_dim)
    init_layer_norm(store, f"{prefix}.ln_f", d)
    init_linear(store, rng, f"{prefix}.proj", d, d)


def init_map_head(store: ParamStore, rng: np.random.Generator, cfg: EncoderConfig,
                  prefix: str = "map"):
    d = cfg.width
    store[f"{prefix}.probe"] = Tensor(rng.normal(0.0, 0.02, (1, d)), requires_grad=True)
    init_layer_norm(store, f"{prefix}.ln", d)
    init_attention(store, rng, f"{prefix}.attn", d)
    init_linear(store, rng, f"{prefix}.proj", d, d)


def init_pretrain_params(cfg: EncoderConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    init_image_tower(store, rng, cfg)
    init_text_tower(store, rng, cfg)
    init_map_head(store, rng, cfg)
    store["temp.log_tau"] = Tensor(np.array(LOG_TAU_INIT), requires_grad=True)
    return store


# ----------------------------------------------------------------- encoders


def _run_blocks(store: ParamStore, prefix: str, x: Tensor, cfg: EncoderConfig,
                train: bool, rng: np.random.Generator | None,
                key_mask: np.ndarray | None = None) -> Tensor:
    for i in range(cfg.depth):
        if train and cfg.droplayer_rate > 0.0:
            if rng is None:
                raise ConfigError("train-mode encoding with stochastic depth needs an rng")
            if rng.random() < cfg.droplayer_rate:
                continue  # skip the whole residual block, identity preserved
        x = transformer_block(store, f"{prefix}.block{i}", x, cfg.n_heads, key_mask=key_mask)
    return x


def encode_image(store: ParamStore, cfg: EncoderConfig, images,
                 train: bool = False, rng: np.random.Generator | None = None,
                 prefix: str = "img") -> Tensor:
    """Images [B, H, W, C] (floats in [0, 1]) -> tokens [B, G*G, D]."""
    if isinstance(images, np.ndarray) and not np.isfinite(images).all():
        raise DataError("non-finite image input")
    for name in (f"{prefix}.patch.w", f"{prefix}.pos"):
        if not np.isfinite(store[name].data).all():
            raise ConfigError(f"non-finite parameter {name}")
    x = images if isinstance(images, Tensor) else Tensor(images)
    if x.ndim == 3:
        x = x.reshape(1, *x.shape)
    tokens = patchify(x, cfg.patch_size)
    x = linear(store, f"{prefix}.patch", tokens) + store[f"{prefix}.pos"]
    return _run_blocks(store, prefix, x, cfg, train, rng)


def map_pool(store: ParamStore, tokens, n_heads: int = 1, prefix: str = "map") -> Tensor:
    """Attention-pool a token sequence with a learned probe (pre-training only)."""
    x = tokens if isinstance(tokens, Tensor) else Tensor(tokens)
    squeeze = x.ndim == 2
    if squeeze:
        x = x.reshape(1, *x.shape)
    if x.shape[1] == 0:
        raise ConfigError("map_pool needs a nonempty token sequence")
    probe = store[f"{prefix}.probe"].reshape(1, 1, x.shape[-1])
    pooled = attention(store, f"{prefix}.attn", probe, x, n_heads)
    pooled = pooled.reshape(pooled.shape[0], pooled.shape[2])
    return pooled.reshape(pooled.shape[1]) if squeeze else pooled


def pretrain_image_embedding(store: ParamStore, cfg: EncoderConfig, images,
                             train: bool = False,
                             rng: np.random.Generator | None = None) -> Tensor:
    tokens = encode_image(store, cfg, images, train=train, rng=rng)
    normed = apply_layer_norm(store, "map.ln", tokens)
    return linear(store, "map.proj", map_pool(store, normed, cfg.n_heads))


def pad_token_ids(token_ids: list[list[int]], cfg: EncoderConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Validate, truncate to the 16-token limit, and right-pad a batch.

    Returns (ids [B, L], key_mask [B, L], eos_positions [B]).
    """
    clipped = []
    for ids in token_ids:
        ids = list(ids)
        if EOS_ID not in ids:
            raise DataError("text token sequence lacks an EOS terminator")
        if ids[-1] != EOS_ID:
            raise DataError("text token sequence must end with EOS")
        if len(ids) > cfg.text_max_len:
            ids = ids[: cfg.text_max_len - 1] + [EOS_ID]
        clipped.append(ids)
    max_len = max(len(ids) for ids in clipped)
    batch = np.full((len(clipped), max_len), PAD_ID, dtype=np.int64)
    eos_pos = np.zeros(len(clipped), dtype=np.int64)
    for i, ids in enumerate(clipped):
        batch[i, : len(ids)] = ids
        eos_pos[i] = len(ids) - 1
    mask = batch != PAD_ID
    return batch, mask, eos_pos


def encode_text(store: ParamStore, cfg: EncoderConfig, token_ids: list[list[int]],
                train: bool = False, rng: np.random.Generator | None = None,
                prefix: str = "txt") -> Tensor:
    """Token id sequences -> shared-space embeddings [B, D], read at EOS.

    Attention is bidirectional; PAD positions are masked out of the keys.
    """
    ids, mask, eos_pos = pad_token_ids(token_ids, cfg)
    b, n = ids.shape
    x = store[f"{prefix}.tok"][ids] + store[f"{prefix}.pos"][np.arange(n)]
    x = _run_blocks(store, prefix, x, cfg, train, rng, key_mask=mask)
    eos = apply_layer_norm(store, f"{prefix}.ln_f", x[np.arange(b), eos_pos])
    return linear(store, f"{prefix}.proj", eos)


# --------------------------------------------------- resolution adaptation


def interpolate_pos_embed(pos: np.ndarray, g_old: int, g_new: int) -> np.ndarray:
    """Bilinear resize of a [G_old^2, D] grid of position embeddings to
    [G_new^2, D]; the four corner embeddings are preserved exactly."""
    if g_new <= 0:
        raise ConfigError("target grid must be positive")
    pos = np.asarray(pos)
    if pos.shape[0] != g_old * g_old:
        raise ConfigError("position table does not match the declared grid")
    if g_new == g_old:
        return pos.copy()
    d = pos.shape[1]
    grid = pos.reshape(g_old, g_old, d)
    if g_new == 1:
        coords = np.array([(g_old - 1) / 2.0])
    else:
        coords = np.linspace(0.0, g_old - 1.0, g_new)
    lo = np.floor(coords).astype(int)
    hi = np.minimum(lo + 1, g_old - 1)
    frac = coords - lo
    rows = (grid[lo] * (1.0 - frac)[:, None, None] + grid[hi] * frac[:, None, None])
    out = (rows[:, lo] * (1.0 - frac)[None, :, None] + rows[:, hi] * frac[None, :, None])
    return out.reshape(g_new * g_new, d)


# ------------------------------------------------------------- contrastive


def temperature_scale(log_tau: Tensor) -> Tensor:
    """exp(log_tau) with log_tau clamped to keep the scale in [e^-5, e^5]."""
    return maximum(minimum(log_tau, LOG_TAU_RANGE), -LOG_TAU_RANGE).exp()


def contrastive_loss(image_embs: Tensor, text_embs: Tensor, log_tau: Tensor) -> Tensor:
    """Symmetric cross-entropy over the scaled cosine-similarity matrix of a
    batch of matched (image, text) pairs; diagonal entries are the targets."""
    b = image_embs.shape[0]
    if b < 1 or text_embs.shape[0] != b:
        raise ConfigError("need matched, equal-length embedding batches")
    img = l2_normalize(image_embs)
    txt = l2_normalize(text_embs)
    logits = (img @ txt.swapaxes(-1, -2)) * temperature_scale(log_tau)
    diag_idx = (np.arange(b), np.arange(b))
    diag = logits[diag_idx]
    loss_i2t = (logsumexp(logits, axis=1) - diag).mean()
    loss_t2i = (logsumexp(logits, axis=0) - diag).mean()
    return (loss_i2t + loss_t2i) * 0.5
