"""Binary checkpoint format for InfoNet models.

Layout (all integers little-endian)::

    b"INFN"  u32 format_version
    u32 config_len  config_len bytes of UTF-8 JSON
    u32 tensor_count
    per tensor: u16 name_len, name (UTF-8), u8 ndim, ndim x u32 dims,
                prod(dims) x f32 data
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from ..autodiff import ParamStore
from .model import InfoNetConfig, InfoNetModel

MAGIC = b"INFN"
FORMAT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def dumps(model: InfoNetModel) -> bytes:
    cfg = json.dumps(model.config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(cfg)), cfg,
             struct.pack("<I", len(model.params))]
    for name, t in model.params:
        raw = name.encode("utf-8")
        data = np.ascontiguousarray(t.data, dtype="<f4")
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<B", data.ndim),
                  struct.pack(f"<{data.ndim}I", *data.shape), data.tobytes()]
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(
                f"truncated checkpoint: need {n} bytes for {what} at offset {self.pos}, "
                f"only {len(self.buf) - self.pos} left")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes) -> InfoNetModel:
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise CheckpointFormatError(f"bad magic {magic!r} at offset 0 (expected {MAGIC!r})")
    (version,) = r.unpack("<I", "format version")
    if version != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"unsupported checkpoint format version {version} at offset 4 (reader supports {FORMAT_VERSION})")
    (clen,) = r.unpack("<I", "config length")
    at = r.pos
    try:
        config = InfoNetConfig.from_dict(json.loads(r.take(clen, "config").decode("utf-8")))
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ValueError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"invalid config block at offset {at}: {exc}") from exc
    (count,) = r.unpack("<I", "tensor count")
    ps = ParamStore()
    for _ in range(count):
        at = r.pos
        (nlen,) = r.unpack("<H", "tensor name length")
        name = r.take(nlen, "tensor name").decode("utf-8")
        (ndim,) = r.unpack("<B", f"ndim of {name!r}")
        dims = r.unpack(f"<{ndim}I", f"dims of {name!r}")
        n = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(r.take(4 * n, f"data of {name!r}"), dtype="<f4").reshape(dims)
        try:
            ps.add(name, data.astype(np.float32))
        except KeyError as exc:
            raise CheckpointFormatError(f"duplicate tensor {name!r} at offset {at}") from exc
    if r.pos != len(buf):
        raise CheckpointFormatError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos}")
    ref = InfoNetModel.init(config, np.random.default_rng(0))
    want = {k: t.shape for k, t in ref.params}
    got = {k: t.shape for k, t in ps}
    if want != got:
        raise CheckpointFormatError("tensor names/shapes do not match the stored config")
    ordered = ParamStore()
    for k in ref.params.names():
        ordered.add(k, ps[k].data)
    return InfoNetModel(config, ordered)


def save_checkpoint(model: InfoNetModel, path) -> None:
    Path(path).write_bytes(dumps(model))


def load_checkpoint(path) -> InfoNetModel:
    return loads(Path(path).read_bytes())
