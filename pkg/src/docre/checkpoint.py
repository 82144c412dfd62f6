"""Versioned binary checkpoints.

Layout: 8-byte magic, little-endian uint32 header length, UTF-8 JSON header,
then every parameter as raw little-endian float64 in header order. The header
carries the configs, schema, vocabulary and a digest of the vocabulary, so a
checkpoint is self-contained and its bytes depend only on its contents.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .corpus import Relation, RelationSchema
from .encoder import EncoderConfig, Vocabulary
from .head import HeadConfig
from .model import DocREModel

MAGIC = b"DOCRECK\x01"
VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(model: DocREModel, path, extra: dict | None = None) -> None:
    params = model.parameters()
    header = {
        "version": VERSION,
        "encoder": asdict(model.enc_cfg),
        "head": asdict(model.head_cfg),
        "seed": model.seed,
        "schema": model.schema.to_json(),
        "vocab": model.vocab.tokens[4:],
        "vocab_digest": model.vocab.digest(),
        "parameters": [{"name": p.name, "shape": list(p.data.shape)} for p in params],
        "extra": extra or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params:
            fh.write(np.ascontiguousarray(p.data, dtype="<f8").tobytes())


def read_header(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    (n,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("version") != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    return header, raw[12 + n:]


def load_checkpoint(path) -> tuple[DocREModel, dict]:
    """Rebuild the model; returns it with the ``extra`` header record."""
    header, data = read_header(path)
    vocab = Vocabulary(header["vocab"])
    if vocab.digest() != header["vocab_digest"]:
        raise CheckpointError(f"{path}: vocabulary digest mismatch")
    schema = RelationSchema([Relation(r["id"], r["name"], r["description"]) for r in header["schema"]])
    model = DocREModel(EncoderConfig(**header["encoder"]), HeadConfig(**header["head"]),
                       vocab, schema, seed=header["seed"])
    expected = sum(int(np.prod(p["shape"])) for p in header["parameters"]) * 8
    if len(data) != expected:
        raise CheckpointError(f"{path}: expected {expected} bytes of parameters, found {len(data)}")
    flat = np.frombuffer(data, dtype="<f8")
    state, at = {}, 0
    for p in header["parameters"]:
        size = int(np.prod(p["shape"]))
        state[p["name"]] = flat[at:at + size].reshape(p["shape"]).astype(np.float64)
        at += size
    try:
        model.load_state(state)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model, header["extra"]
