"""Versioned binary checkpoints.

Layout: magic "OWLD", format version (u32 LE), header length (u32 LE),
header JSON (model config, vocabulary hash, stage), parameter count, then
per parameter in sorted-name order: name length + UTF-8 name, rank, extents,
and little-endian IEEE-754 32-bit values. Writes are atomic (temp + rename);
loads verify magic, version, declared shapes, and vocabulary compatibility.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from ovdet.configs import ModelConfig
from ovdet.errors import (
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    VocabMismatchError,
)
from ovdet.nn.params import ParamStore
from ovdet.nn.tensor import Tensor
from ovdet.tokenizer import Vocabulary

MAGIC = b"OWLD"
FORMAT_VERSION = 1
_MAX_RANK = 8


def save_checkpoint(params: ParamStore, cfg: ModelConfig, vocab: Vocabulary,
                    path: str | Path, stage: str = "finetune"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "format_version": FORMAT_VERSION,
        "model": cfg.to_dict(),
        "vocab_sha256": vocab.sha256(),
        "stage": stage,
        "param_version": params.version,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", len(header_bytes)))
            fh.write(header_bytes)
            fh.write(struct.pack("<I", len(params)))
            for name, tensor in params.items():
                data = np.asarray(tensor.data, dtype="<f4")  # 0-d rank preserved
                name_bytes = name.encode("utf-8")
                fh.write(struct.pack("<I", len(name_bytes)))
                fh.write(name_bytes)
                fh.write(struct.pack("<I", data.ndim))
                fh.write(struct.pack(f"<{data.ndim}I", *data.shape))
                fh.write(data.tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointTruncatedError(f"checkpoint ended while reading {what}")
    return data


def load_checkpoint(path: str | Path, vocab: Vocabulary | None = None
                    ) -> tuple[ParamStore, ModelConfig, dict]:
    path = Path(path)
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != MAGIC:
            raise CheckpointVersionError(f"{path} is not a model checkpoint")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != FORMAT_VERSION:
            raise CheckpointVersionError(f"unsupported checkpoint version {version}")
        (header_len,) = struct.unpack("<I", _read_exact(fh, 4, "header length"))
        header = json.loads(_read_exact(fh, header_len, "header").decode("utf-8"))
        if vocab is not None and header.get("vocab_sha256") != vocab.sha256():
            raise VocabMismatchError(
                "checkpoint was built against a different vocabulary file")
        (n_params,) = struct.unpack("<I", _read_exact(fh, 4, "parameter count"))
        store = ParamStore(version=str(header.get("param_version", "1")))
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", _read_exact(fh, 4, "name length"))
            name = _read_exact(fh, name_len, "name").decode("utf-8")
            (rank,) = struct.unpack("<I", _read_exact(fh, 4, "rank"))
            if rank > _MAX_RANK:
                raise CheckpointShapeError(f"implausible rank {rank} for {name}")
            shape = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, "extents"))
            count = int(np.prod(shape)) if rank else 1
            raw = _read_exact(fh, 4 * count, f"values of {name}")
            arr = np.frombuffer(raw, dtype="<f4", count=count)
            if arr.size != count:
                raise CheckpointShapeError(f"value count mismatch for {name}")
            store[name] = Tensor(arr.reshape(shape).astype(np.float32),
                                 requires_grad=True)
        trailing = fh.read(1)
        if trailing:
            raise CheckpointShapeError("unexpected bytes after the parameter blob")
    cfg = ModelConfig.from_dict(header["model"])
    return store, cfg, header
