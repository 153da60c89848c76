"""Prompt templating for query augmentation.

Training samples one template per category per image (so every instance of
a category shares its prompt within an image); evaluation instantiates all
seven ensemble templates and averages predicted probabilities downstream.
"""

from __future__ import annotations

import functools
from importlib import resources

import numpy as np

from ovdet.errors import ConfigError


@functools.lru_cache(maxsize=4)
def _load(name: str) -> tuple[str, ...]:
    text = resources.files("ovdet.data").joinpath(f"templates/{name}").read_text("utf-8")
    templates = tuple(line for line in text.splitlines() if line.strip())
    for t in templates:
        if "{}" not in t:
            raise ConfigError(f"template without a {{}} slot: {t!r}")
    return templates


def train_templates() -> tuple[str, ...]:
    return _load("prompts_train.txt")


def eval_templates() -> tuple[str, ...]:
    return _load("prompts_eval.txt")


def apply_prompt(category: str, mode: str, rng: np.random.Generator | None = None,
                 templates: tuple[str, ...] | None = None,
                 enabled: bool = True) -> str | list[str]:
    """One prompted string (train) or the full template list (eval).

    With prompting disabled the raw category string passes through; eval
    mode then returns a single-element list so ensembling code need not
    special-case it.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"unknown prompt mode {mode!r}")
    if not enabled:
        return category if mode == "train" else [category]
    if templates is None:
        templates = train_templates() if mode == "train" else eval_templates()
    if len(templates) == 0:
        raise ConfigError("empty template set")
    if mode == "train":
        if rng is None:
            raise ConfigError("train-mode prompting needs an rng")
        return templates[int(rng.integers(len(templates)))].format(category)
    return [t.format(category) for t in templates]
