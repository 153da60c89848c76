"""Adam with decoupled weight decay, LR schedule, and gradient clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from ovdet.errors import ConfigError
from ovdet.nn.params import ParamStore, check_same_keys


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    base_lr_image: float = 1e-3
    base_lr_text: float = 1e-3
    weight_decay: float = 0.0
    max_per_example_grad_norm: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.beta1 < self.beta2 < 1.0):
            raise ConfigError("need 0 < beta1 < beta2 < 1")
        if self.base_lr_text > self.base_lr_image:
            raise ConfigError("text LR must not exceed image LR")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0


def _decayable(name: str) -> bool:
    # biases and layer-norm gains stay out of weight decay
    leaf = name.rsplit(".", 1)[-1]
    return leaf not in ("bias", "gain", "b")


def adam_step(
    params: ParamStore,
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    cfg: OptimizerConfig,
    lr: float,
    advance_step: bool = True,
) -> None:
    """One bias-corrected Adam update over every entry of ``params``.

    ``grads`` must be keyed identically to ``params``. Weight decay is
    decoupled (subtracted from the parameter directly, scaled by lr) and
    skipped for bias/gain leaves. When the image and text towers are stepped
    as two separate stores with different rates, the caller advances the
    shared step counter once via ``advance_step``.
    """
    check_same_keys(params, grads)
    if advance_step:
        state.step += 1
    t = state.step
    b1, b2, eps = cfg.beta1, cfg.beta2, cfg.epsilon
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ConfigError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if cfg.weight_decay and _decayable(name):
            update = update + cfg.weight_decay * p.data
        p.data = p.data - lr * update


def sgd_step(params: ParamStore, grads: Mapping[str, np.ndarray], lr: float) -> None:
    """Plain SGD; used by the LR-ratio probe where Adam's normalization
    would hide the proportionality between step size and learning rate."""
    check_same_keys(params, grads)
    for name, p in params.items():
        p.data = p.data - lr * grads[name]


def cosine_lr(step: int, total_steps: int, base_lr: float, warmup_steps: int = 500) -> float:
    """Linear warmup to ``base_lr``, then half-cosine decay to 0 at ``total_steps``."""
    if total_steps <= 0:
        raise ConfigError("total_steps must be positive")
    if not 0 <= step <= total_steps:
        raise ConfigError("step out of range")
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    denom = max(1, total_steps - warmup_steps)
    t = (step - warmup_steps) / denom
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * t))


def global_norm(grads: Mapping[str, np.ndarray]) -> float:
    total = 0.0
    for name in sorted(grads):
        g = grads[name]
        total += float((g.astype(np.float64) ** 2).sum())
    return math.sqrt(total)


def clip_by_global_norm(grads: Mapping[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    norm = global_norm(grads)
    if norm <= max_norm or norm == 0.0:
        return {k: v.copy() for k, v in grads.items()}
    scale = max_norm / norm
    return {k: v * scale for k, v in grads.items()}


def per_example_clip(
    per_example_grads: Sequence[Mapping[str, np.ndarray]],
    max_norm: float = 1.0,
) -> dict[str, np.ndarray]:
    """Clip each example's global gradient norm, then average over the batch.

    Clipping before accumulation is not the same as clipping the averaged
    gradient: one outlier example cannot dominate the update.
    """
    if len(per_example_grads) == 0:
        raise ConfigError("per_example_clip needs at least one example")
    keys = sorted(per_example_grads[0])
    for g in per_example_grads[1:]:
        if sorted(g) != keys:
            raise ConfigError("per-example gradients are keyed differently")
    acc = {k: np.zeros_like(per_example_grads[0][k]) for k in keys}
    for g in per_example_grads:
        clipped = clip_by_global_norm(g, max_norm)
        for k in keys:
            acc[k] += clipped[k]
    inv = 1.0 / len(per_example_grads)
    for k in keys:
        acc[k] *= inv
    return acc
