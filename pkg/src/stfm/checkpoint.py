"""Binary model checkpoints.

Layout (little-endian):
  magic "STFM" | u32 format version | u64 config blob length | config text
  u32 parameter count, then per parameter:
  u32 name length | name bytes (UTF-8) | u32 rank | u64 dims... | f64 values

Round trips are bit-exact; loading validates magic, version, and that the
tensor table matches the architecture described by the config blob.
"""

from __future__ import annotations

import struct

import numpy as np

from .model import SetModel, model_from_config_text

MAGIC = b"STFM"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(model: SetModel, path) -> None:
    blob = model.config_text().encode("utf-8")
    params = model.parameters()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(params)))
        for p in params:
            name = p.name.encode("utf-8")
            f.write(struct.pack("<I", len(name)))
            f.write(name)
            f.write(struct.pack("<I", 2))
            f.write(struct.pack("<QQ", *p.shape))
            f.write(p.data.astype("<f8").tobytes())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def take(self, n: int, what: str) -> bytes:
        if self.off + n > len(self.raw):
            raise CheckpointError(f"checkpoint truncated while reading {what}")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def _read_table(path) -> tuple[str, dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        r = _Reader(f.read())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (blob_len,) = r.unpack("<Q", "config length")
    blob = r.take(blob_len, "config blob").decode("utf-8")
    (count,) = r.unpack("<I", "parameter count")
    table: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I", "name length")
        name = r.take(name_len, "name").decode("utf-8")
        (rank,) = r.unpack("<I", f"rank of {name}")
        if rank != 2:
            raise CheckpointError(f"parameter {name}: unsupported rank {rank}")
        dims = r.unpack("<QQ", f"dims of {name}")
        vals = np.frombuffer(r.take(8 * dims[0] * dims[1], f"values of {name}"),
                             dtype="<f8").reshape(dims).copy()
        table[name] = vals
    if r.off != len(r.raw):
        raise CheckpointError("trailing bytes after tensor table")
    return blob, table


def load_into(model: SetModel, path) -> SetModel:
    """Fill an existing model's parameters; rejects any name/shape mismatch."""
    blob, table = _read_table(path)
    params = {p.name: p for p in model.parameters()}
    if set(table) != set(params):
        bad = sorted(set(table) ^ set(params))[0]
        raise CheckpointError(f"parameter set mismatch at {bad!r}")
    for name, vals in table.items():
        p = params[name]
        if p.shape != vals.shape:
            raise CheckpointError(
                f"parameter {name}: shape {vals.shape} does not match {p.shape}")
        p.data = vals
    return model


def load_checkpoint(path) -> SetModel:
    """Reconstruct the model described by the checkpoint's config blob."""
    blob, _ = _read_table(path)
    try:
        model = model_from_config_text(blob, seed=0)
    except ValueError as e:
        raise CheckpointError(f"bad config blob: {e}") from e
    return load_into(model, path)
