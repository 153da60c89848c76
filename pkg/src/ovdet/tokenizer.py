"""Whitespace word-level tokenizer over a small closed vocabulary.

The vocabulary is built once from the dataset's category strings plus the
prompt templates; ids 0/1/2 are reserved for PAD/EOS/UNK. The on-disk format
is one token per line, line index = id.
"""

from __future__ import annotations

import hashlib
import re
from pathlib import Path
from typing import Iterable

from ovdet.errors import DataError

PAD_ID = 0
EOS_ID = 1
UNK_ID = 2

PAD_TOKEN = "<pad>"
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

_WORD_RE = re.compile(r"[a-z0-9]+")


def words(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def build_vocab_for(categories) -> "Vocabulary":
    """Closed vocabulary covering category names, prompt templates, caption
    connectives, and the image-query fallback phrase."""
    from ovdet.data.prompts import eval_templates, train_templates

    texts = list(categories)
    texts += [t.format("") for t in train_templates() + eval_templates()]
    texts += ["a", "and", "an image of an object"]
    return Vocabulary.build(texts)


class Vocabulary:
    def __init__(self, tokens: list[str]):
        if tokens[:3] != [PAD_TOKEN, EOS_TOKEN, UNK_TOKEN]:
            raise DataError("vocabulary must start with <pad>, <eos>, <unk>")
        if len(set(tokens)) != len(tokens):
            raise DataError("vocabulary contains duplicate tokens")
        self.tokens = list(tokens)
        self._ids = {t: i for i, t in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self.tokens)

    @staticmethod
    def build(texts: Iterable[str]) -> "Vocabulary":
        seen: set[str] = set()
        for text in texts:
            seen.update(words(text))
        return Vocabulary([PAD_TOKEN, EOS_TOKEN, UNK_TOKEN] + sorted(seen))

    def encode(self, text: str, max_len: int = 16) -> list[int]:
        """Word ids terminated by EOS; truncated to ``max_len`` keeping EOS."""
        ids = [self._ids.get(w, UNK_ID) for w in words(text)]
        ids.append(EOS_ID)
        if len(ids) > max_len:
            ids = ids[: max_len - 1] + [EOS_ID]
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            if i == EOS_ID:
                break
            if i != PAD_ID:
                out.append(self.tokens[i])
        return " ".join(out)

    def content(self) -> str:
        return "\n".join(self.tokens) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.content().encode("utf-8")).hexdigest()

    def save(self, path: str | Path):
        Path(path).write_text(self.content(), encoding="utf-8")

    @staticmethod
    def load(path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return Vocabulary(lines)
