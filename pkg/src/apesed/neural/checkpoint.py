"""Model checkpoints: one binary container holding a metadata JSON block
and every parameter as a float32 little-endian blob with a shape header.

Layout: magic "APEC", version u32, meta_len u32, meta JSON, num_tensors
u32, then per tensor (name_len u16, name, ndim u8, dims u32 each, data).
Writes go to a temp file and rename into place, so a crash never leaves a
half-written checkpoint behind. Round-trips are bit-exact for float32
models.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from ..annotations import ClassVocab
from ..errors import BadMagic, FormatError, IncompatibleCheckpoint
from .autodiff import Tensor
from .model import ModelConfig, SequenceModel, _param_specs

CKPT_MAGIC = b"APEC"
CKPT_VERSION = 1


def save_checkpoint(path: str | Path, model: SequenceModel, vocab: ClassVocab,
                    feature_kind: str, train_seed: int, epoch: int,
                    val_f1: float) -> None:
    meta = {
        "format_version": CKPT_VERSION,
        "config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        "feature_kind": feature_kind,
        "train_seed": train_seed,
        "epoch": epoch,
        "val_f1": val_f1,
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    chunks = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(meta_bytes)),
              meta_bytes, struct.pack("<I", len(model.params))]
    for name, tensor in model.params.items():
        data = np.ascontiguousarray(tensor.data, dtype="<f4")
        name_b = name.encode()
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", data.ndim))
        chunks.append(struct.pack(f"<{data.ndim}I", *data.shape))
        chunks.append(data.tobytes())
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, origin: str):
        self.raw = raw
        self.pos = 0
        self.origin = origin

    def take(self, fmt: str):
        size = struct.calcsize(fmt)
        if self.pos + size > len(self.raw):
            raise FormatError(f"{self.origin}: truncated checkpoint")
        vals = struct.unpack_from(fmt, self.raw, self.pos)
        self.pos += size
        return vals

    def take_bytes(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.origin}: truncated checkpoint")
        b = self.raw[self.pos:self.pos + n]
        self.pos += n
        return b


def load_checkpoint(path: str | Path) -> tuple[SequenceModel, dict]:
    """Read a checkpoint; returns (model, metadata).

    Metadata keys: format_version, config, vocab, feature_kind,
    train_seed, epoch, val_f1. Shape or naming drift from what the stored
    config implies raises IncompatibleCheckpoint.
    """
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 12 or raw[:4] != CKPT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    r = _Reader(raw, str(path))
    r.pos = 4
    version, meta_len = r.take("<II")
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    try:
        meta = json.loads(r.take_bytes(meta_len))
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: bad metadata JSON ({err})") from None
    config = ModelConfig.from_dict(meta["config"])
    (num_tensors,) = r.take("<I")
    params = {}
    for _ in range(num_tensors):
        (name_len,) = r.take("<H")
        name = r.take_bytes(name_len).decode()
        (ndim,) = r.take("<B")
        shape = r.take(f"<{ndim}I")
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        data = np.frombuffer(r.take_bytes(4 * count), dtype="<f4").reshape(shape)
        params[name] = Tensor(data.copy(), needs_grad=True)

    expected = {name: shape for name, shape, _ in _param_specs(config)}
    got = {name: tuple(t.data.shape) for name, t in params.items()}
    if got != expected:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        wrong = sorted(k for k in set(got) & set(expected) if got[k] != expected[k])
        raise IncompatibleCheckpoint(
            f"{path}: parameters do not match config "
            f"(missing {missing}, extra {extra}, wrong shape {wrong})"
        )
    return SequenceModel(config, params), meta
