"""Functional Transformer building blocks over the autodiff Tensor.

Parameters live in a flat name->Tensor mapping (ParamStore); every function
here takes the store plus a name prefix, so the same code serves the image
tower, the text tower, and the attention-pooling head.
"""

from __future__ import annotations

import math

import numpy as np

from ovdet.errors import ConfigError
from ovdet.nn.params import ParamStore
from ovdet.nn.tensor import Tensor, gelu, layer_norm, softmax


def init_linear(store: ParamStore, rng: np.random.Generator, prefix: str,
                d_in: int, d_out: int, std: float | None = None, zero: bool = False):
    if zero:
        w = np.zeros((d_in, d_out))
    else:
        w = rng.normal(0.0, std if std is not None else 1.0 / math.sqrt(d_in), (d_in, d_out))
    store[f"{prefix}.w"] = Tensor(w, requires_grad=True)
    store[f"{prefix}.b"] = Tensor(np.zeros(d_out), requires_grad=True)


def linear(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return x @ store[f"{prefix}.w"] + store[f"{prefix}.b"]


def init_layer_norm(store: ParamStore, prefix: str, dim: int):
    store[f"{prefix}.gain"] = Tensor(np.ones(dim), requires_grad=True)
    store[f"{prefix}.bias"] = Tensor(np.zeros(dim), requires_grad=True)


def apply_layer_norm(store: ParamStore, prefix: str, x: Tensor, eps: float = 1e-6) -> Tensor:
    return layer_norm(x, store[f"{prefix}.gain"], store[f"{prefix}.bias"], eps=eps)


def init_attention(store: ParamStore, rng: np.random.Generator, prefix: str, dim: int):
    for leaf in ("wq", "wk", "wv", "wo"):
        store[f"{prefix}.{leaf}"] = Tensor(
            rng.normal(0.0, 1.0 / math.sqrt(dim), (dim, dim)), requires_grad=True)
    for leaf in ("bq", "bk", "bv", "bo"):
        store[f"{prefix}.{leaf}"] = Tensor(np.zeros(dim), requires_grad=True)


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, n, d = x.shape
    return x.reshape(b, n, n_heads, d // n_heads).transpose((0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, n, dh = x.shape
    return x.transpose((0, 2, 1, 3)).reshape(b, n, h * dh)


def attention(store: ParamStore, prefix: str, x_q: Tensor, x_kv: Tensor,
              n_heads: int, key_mask: np.ndarray | None = None) -> Tensor:
    """Multi-head attention of x_q over x_kv; shapes [B, N, D].

    key_mask, when given, is a bool array [B, N_kv]; False keys are excluded
    from the softmax.
    """
    d = x_q.shape[-1]
    if d % n_heads != 0:
        raise ConfigError(f"width {d} not divisible by {n_heads} heads")
    dh = d // n_heads
    q = _split_heads(x_q @ store[f"{prefix}.wq"] + store[f"{prefix}.bq"], n_heads)
    k = _split_heads(x_kv @ store[f"{prefix}.wk"] + store[f"{prefix}.bk"], n_heads)
    v = _split_heads(x_kv @ store[f"{prefix}.wv"] + store[f"{prefix}.bv"], n_heads)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dh))
    if key_mask is not None:
        bias = np.where(key_mask, 0.0, -1e9).astype(scores.dtype)[:, None, None, :]
        scores = scores + bias
    out = _merge_heads(softmax(scores, axis=-1) @ v)
    return out @ store[f"{prefix}.wo"] + store[f"{prefix}.bo"]


def multi_head_attention(x: Tensor, store: ParamStore, n_heads: int,
                         prefix: str = "attn") -> Tensor:
    """Self-attention for a single [N, D] token sequence (batch of one)."""
    if isinstance(x, np.ndarray):
        x = Tensor(x)
    squeeze = x.ndim == 2
    if squeeze:
        n, d = x.shape
        x = x.reshape(1, n, d)
    out = attention(store, prefix, x, x, n_heads)
    if squeeze:
        return out.reshape(out.shape[1], out.shape[2])
    return out


def init_mlp(store: ParamStore, rng: np.random.Generator, prefix: str, dim: int, hidden: int):
    init_linear(store, rng, f"{prefix}.fc1", dim, hidden)
    init_linear(store, rng, f"{prefix}.fc2", hidden, dim)


def mlp(store: ParamStore, prefix: str, x: Tensor) -> Tensor:
    return linear(store, f"{prefix}.fc2", gelu(linear(store, f"{prefix}.fc1", x)))


def init_block(store: ParamStore, rng: np.random.Generator, prefix: str, dim: int, hidden: int):
    init_layer_norm(store, f"{prefix}.ln1", dim)
    init_attention(store, rng, f"{prefix}.attn", dim)
    init_layer_norm(store, f"{prefix}.ln2", dim)
    init_mlp(store, rng, f"{prefix}.mlp", dim, hidden)


def transformer_block(store: ParamStore, prefix: str, x: Tensor, n_heads: int,
                      key_mask: np.ndarray | None = None) -> Tensor:
    """Pre-LN residual block: attention then GELU MLP."""
    h = apply_layer_norm(store, f"{prefix}.ln1", x)
    x = x + attention(store, f"{prefix}.attn", h, h, n_heads, key_mask=key_mask)
    return x + mlp(store, f"{prefix}.mlp", apply_layer_norm(store, f"{prefix}.ln2", x))
