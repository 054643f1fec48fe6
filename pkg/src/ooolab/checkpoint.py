"""Checkpoint files: magic, version, JSON manifest, raw little-endian f64 blob.

Layout::

    b"OOOL" | version byte b"1" | u32 manifest length | manifest (UTF-8 JSON) | blob

The manifest records the model config, parameter names and shapes and the
loss trace; the blob concatenates every parameter in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .errors import CheckpointFormatError, CheckpointVersionError
from .models import ModelCheckpoint, ModelConfig

MAGIC = b"OOOL"
VERSION = b"1"
_LEN = struct.Struct("<I")


def _layer_manifest(layers):
    return [[list(w.shape), list(b.shape)] for w, b in layers]


def dumps_checkpoint(ckpt: ModelCheckpoint) -> bytes:
    manifest = {
        "kind": ckpt.config.kind,
        "seed": ckpt.config.seed,
        "config": ckpt.config.to_dict(),
        "encoder": _layer_manifest(ckpt.encoder),
        "decoder": _layer_manifest(ckpt.decoder),
        "loss_trace": ckpt.loss_trace,
    }
    head = json.dumps(manifest, sort_keys=True).encode("utf-8")
    blob = b"".join(p.value.astype("<f8").tobytes() for p in ckpt.params)
    return MAGIC + VERSION + _LEN.pack(len(head)) + head + blob


def loads_checkpoint(data: bytes) -> ModelCheckpoint:
    if len(data) < 9 or data[:4] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic)")
    if data[4:5] != VERSION:
        raise CheckpointVersionError(
            f"checkpoint version {data[4:5]!r} is not supported (expected {VERSION!r})")
    (n,) = _LEN.unpack_from(data, 5)
    start = 9 + n
    if len(data) < start:
        raise CheckpointFormatError("truncated manifest")
    try:
        manifest = json.loads(data[9:start].decode("utf-8"))
        config = ModelConfig(**manifest["config"])
        shapes = manifest["encoder"] + manifest["decoder"]
    except (ValueError, KeyError, TypeError) as exc:
        raise CheckpointFormatError(f"unreadable manifest: {exc}") from exc
    sizes = [int(np.prod(s)) for pair in shapes for s in pair]
    if len(data) != start + 8 * sum(sizes):
        raise CheckpointFormatError("parameter blob length does not match manifest")
    flat = np.frombuffer(data, dtype="<f8", offset=start).astype(np.float64)
    arrays, pos = [], 0
    for pair in shapes:
        for s in pair:
            k = int(np.prod(s))
            arrays.append(flat[pos:pos + k].reshape(s).copy())
            pos += k
    params = [gc.parameter(a) for a in arrays]
    layers = list(zip(params[0::2], params[1::2]))
    n_enc = len(manifest["encoder"])
    return ModelCheckpoint(config, layers[:n_enc], layers[n_enc:],
                           list(manifest["loss_trace"]))


def save_checkpoint(ckpt: ModelCheckpoint, path) -> Path:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(dumps_checkpoint(ckpt))
    tmp.replace(path)
    return path


def load_checkpoint(path) -> ModelCheckpoint:
    return loads_checkpoint(Path(path).read_bytes())
