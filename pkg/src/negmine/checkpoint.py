"""Versioned binary scorer checkpoints with bit-exact round trips.

Layout (all integers little-endian):

    bytes 0-7    magic b"NEGMINE\\0"
    bytes 8-11   format version (uint32)
    bytes 12-19  header length in bytes (uint64)
    header       UTF-8 JSON: hidden dim, vocab (relations and words in id
                 order), thresholds, and the shape of each parameter array
                 in blob order
    blobs        raw C-order float64 arrays, concatenated in header order

JSON floats are serialized via repr, which round-trips doubles exactly, and
arrays are stored as raw bytes, so save → load → save reproduces the file
byte for byte. No timestamps or environment data are embedded.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .ioutil import atomic_write_bytes
from .scorer import ScorerParams, ThresholdMap, TokenVocab

MAGIC = b"NEGMINE\0"
VERSION = 1

_ARRAY_ORDER = ("emb", "ff_w", "ff_b", "w", "retrieval_emb")


class CheckpointError(ValueError):
    """File is not a readable checkpoint of a supported version."""


def save_checkpoint(
    path: str | Path, params: ScorerParams, thresholds: ThresholdMap | None = None
) -> None:
    arrays = {name: np.ascontiguousarray(getattr(params, name), dtype="<f8") for name in _ARRAY_ORDER}
    header = {
        "hidden_dim": params.hidden_dim,
        "bias": params.b,
        "vocab": {"relations": list(params.vocab.relations), "words": list(params.vocab.words)},
        "arrays": [{"name": name, "shape": list(arrays[name].shape)} for name in _ARRAY_ORDER],
        "thresholds": None
        if thresholds is None
        else {
            "per_relation": {r: thresholds.per_relation[r] for r in sorted(thresholds.per_relation)},
            "fallback": thresholds.fallback,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [
        MAGIC,
        np.uint32(VERSION).tobytes(),
        np.uint64(len(header_bytes)).tobytes(),
        header_bytes,
    ]
    parts.extend(arrays[name].tobytes() for name in _ARRAY_ORDER)
    atomic_write_bytes(path, b"".join(parts))


def load_checkpoint(path: str | Path) -> tuple[ScorerParams, ThresholdMap | None]:
    data = Path(path).read_bytes()
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a scorer checkpoint")
    version = int(np.frombuffer(data[8:12], dtype="<u4")[0])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header_len = int(np.frombuffer(data[12:20], dtype="<u8")[0])
    try:
        header = json.loads(data[20 : 20 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint header") from exc
    offset = 20 + header_len
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + count * 8
        if end > len(data):
            raise CheckpointError(f"{path}: truncated checkpoint blob {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    if offset != len(data):
        raise CheckpointError(f"{path}: trailing bytes after checkpoint blobs")
    vocab = TokenVocab(header["vocab"]["relations"], header["vocab"]["words"])
    params = ScorerParams(
        vocab,
        arrays["emb"],
        arrays["ff_w"],
        arrays["ff_b"],
        arrays["w"],
        header["bias"],
        arrays["retrieval_emb"],
    )
    thresholds = None
    if header["thresholds"] is not None:
        thresholds = ThresholdMap(
            dict(header["thresholds"]["per_relation"]), header["thresholds"]["fallback"]
        )
    return params, thresholds
