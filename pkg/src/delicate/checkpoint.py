"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DLCT"                     magic
    u32 version                 currently 1
    u32 n_fields                config block
      n_fields x (u32 name_len, utf-8 name, i64 value)
    u32 n_tensors
      n_tensors x (u32 name_len, utf-8 name, u32 rank, rank x u64 dim,
                   u8 precision (4 = f32, 8 = f64), row-major payload)

Config values are integers: booleans as 0/1 and ``dropout_p`` as
``dropout_p_ppm`` (parts per million).  A shared-layer model stores its block
tensors once.  Files are parsed completely before anything is returned.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .model import ConfigError, ModelConfig, ParamStore, config_fields
from .tensor import Tensor

MAGIC = b"DLCT"
VERSION = 1
_DTYPES = {4: np.dtype("<f4"), 8: np.dtype("<f8")}


class CheckpointError(Exception):
    pass


class CheckpointVersionError(CheckpointError):
    """Bad magic bytes or unsupported format version."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the declared content."""


class CheckpointConfigError(CheckpointError):
    """Stored tensors disagree with the stored config, or with the requested one."""


def _config_to_fields(cfg: ModelConfig) -> list[tuple[str, int]]:
    out = []
    for name in config_fields():
        value = getattr(cfg, name)
        if name == "dropout_p":
            out.append(("dropout_p_ppm", int(round(value * 1_000_000))))
        else:
            out.append((name, int(value)))
    return out


def _fields_to_config(items: dict[str, int]) -> ModelConfig:
    kwargs = {}
    for name in config_fields():
        key = "dropout_p_ppm" if name == "dropout_p" else name
        if key not in items:
            raise CheckpointConfigError(f"config field {key!r} missing from checkpoint")
        value = items[key]
        if name == "dropout_p":
            kwargs[name] = value / 1_000_000
        elif name == "share_layers":
            kwargs[name] = bool(value)
        else:
            kwargs[name] = value
    try:
        return ModelConfig(**kwargs)
    except ConfigError as exc:
        raise CheckpointConfigError(f"invalid stored config: {exc}") from exc


def _name(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def dumps(params: ParamStore, cfg: ModelConfig) -> bytes:
    parts = [MAGIC, struct.pack("<I", VERSION)]
    items = _config_to_fields(cfg)
    parts.append(struct.pack("<I", len(items)))
    for name, value in items:
        parts.append(_name(name) + struct.pack("<q", value))
    parts.append(struct.pack("<I", len(params.tensors)))
    for name, t in params:
        arr = t.data
        tag = arr.dtype.itemsize
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unsupported dtype {arr.dtype}")
        parts.append(_name(name) + struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(struct.pack("<B", tag))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[tag]).tobytes())
    return b"".join(parts)


def save_checkpoint(params: ParamStore, cfg: ModelConfig, path: str | Path) -> None:
    """Write atomically via a temporary sibling file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(dumps(params, cfg))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointTruncatedError(f"unexpected end of file at byte {len(self.buf)} (needed {n} more from {self.pos})")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<I")
        try:
            return self.take(n).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointError("tensor/config name is not valid UTF-8") from exc


def loads(buf: bytes, expected: ModelConfig | None = None) -> tuple[ParamStore, ModelConfig]:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise CheckpointVersionError("not a checkpoint file (bad magic bytes)")
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CheckpointVersionError(f"unsupported checkpoint version {version} (expected {VERSION})")
    (n_fields,) = r.unpack("<I")
    items = {}
    for _ in range(n_fields):
        key = r.name()
        (items[key],) = r.unpack("<q")
    cfg = _fields_to_config(items)
    if expected is not None and expected != cfg:
        diffs = [f for f in config_fields() if getattr(expected, f) != getattr(cfg, f)]
        raise CheckpointConfigError(f"checkpoint config differs from the requested one in {diffs}")

    (n_tensors,) = r.unpack("<I")
    tensors = {}
    for _ in range(n_tensors):
        name = r.name()
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}Q") if rank else ()
        (tag,) = r.unpack("<B")
        if tag not in _DTYPES:
            raise CheckpointError(f"{name}: unknown precision tag {tag}")
        dtype = _DTYPES[tag]
        count = int(np.prod(dims)) if dims else 1
        data = np.frombuffer(r.take(count * dtype.itemsize), dtype=dtype).reshape(dims)
        tensors[name] = Tensor(data.astype(dtype.newbyteorder("="), copy=True), requires_grad=True, name=name)
    if r.pos != len(buf):
        raise CheckpointError(f"{len(buf) - r.pos} trailing bytes after the last tensor")
    dtypes = {t.dtype for t in tensors.values()}
    if len(dtypes) > 1:
        raise CheckpointConfigError("mixed tensor precisions in one checkpoint")
    try:
        store = ParamStore(tensors, cfg)
    except ConfigError as exc:
        raise CheckpointConfigError(str(exc)) from exc
    return store, cfg


def load_checkpoint(path: str | Path, expected: ModelConfig | None = None) -> tuple[ParamStore, ModelConfig]:
    return loads(Path(path).read_bytes(), expected)
