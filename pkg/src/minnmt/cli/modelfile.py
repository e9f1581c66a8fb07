"""Self-describing binary model file.

Layout (all integers little-endian u32 unless noted, strings are a u32
byte count followed by UTF-8)::

    b"MNMT"  version  flags
    config:     count, then (key, JSON value) pairs, keys sorted
    vocabs:     count, then (name, n, n tokens) in name order, specials included
    params:     count, then (name, u8 ndim, ndim dims, raw floats) in name order
    [optimizer: count, then (key, JSON value) pairs]      present iff flags bit 1
    crc32 of every preceding byte

Flags bit 0 selects 32-bit parameter storage (64-bit otherwise).  Loading
streams the file, so peak memory is the parameter bytes plus one record.
"""

import io
import json
import struct
import zlib
from dataclasses import dataclass, field

import numpy as np

from ..fileio import atomic_write
from ..network import ModelConfig
from ..textpipe.vocab import SPECIALS, Vocab

MAGIC = b"MNMT"
VERSION = 1
FLAG_F32 = 1
FLAG_OPTIM = 2


class ModelFormatError(ValueError):
    pass


@dataclass
class ModelFile:
    config: ModelConfig
    vocabs: dict
    params: dict
    optimizer: dict | None = None
    precision: int = 64
    extra: dict = field(default_factory=dict)


def _u32(n):
    return struct.pack("<I", n)


def _str(s):
    b = s.encode("utf-8")
    return _u32(len(b)) + b


def _kv_block(d):
    out = [_u32(len(d))]
    for key in sorted(d):
        out.append(_str(key))
        out.append(_str(json.dumps(d[key], sort_keys=True)))
    return b"".join(out)


def dumps(mf):
    if mf.precision not in (32, 64):
        raise ValueError("precision must be 32 or 64")
    dtype = np.dtype("<f4") if mf.precision == 32 else np.dtype("<f8")
    flags = (FLAG_F32 if mf.precision == 32 else 0) | (FLAG_OPTIM if mf.optimizer is not None else 0)
    buf = io.BytesIO()
    buf.write(MAGIC + _u32(VERSION) + _u32(flags))
    cfg = mf.config.to_dict()
    cfg.update({f"extra.{k}": v for k, v in mf.extra.items()})
    buf.write(_kv_block(cfg))
    buf.write(_u32(len(mf.vocabs)))
    for name in sorted(mf.vocabs):
        tokens = mf.vocabs[name].itos
        buf.write(_str(name) + _u32(len(tokens)))
        for tok in tokens:
            buf.write(_str(tok))
    buf.write(_u32(len(mf.params)))
    for name in sorted(mf.params):
        arr = np.asarray(mf.params[name])
        buf.write(_str(name) + struct.pack("<B", arr.ndim))
        for d in arr.shape:
            buf.write(_u32(d))
        buf.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())
    if mf.optimizer is not None:
        buf.write(_kv_block(mf.optimizer))
    body = buf.getvalue()
    return body + _u32(zlib.crc32(body))


def save_model(path, mf):
    atomic_write(path, dumps(mf))


class _Reader:
    def __init__(self, f):
        self.f = f
        self.crc = 0

    def read(self, n):
        data = self.f.read(n)
        if len(data) != n:
            raise ModelFormatError("truncated model file")
        self.crc = zlib.crc32(data, self.crc)
        return data

    def u32(self):
        return struct.unpack("<I", self.read(4))[0]

    def str(self):
        n = self.u32()
        if n > 1 << 24:
            raise ModelFormatError("corrupt string length")
        try:
            return self.read(n).decode("utf-8")
        except UnicodeDecodeError:
            raise ModelFormatError("corrupt string") from None

    def kv(self):
        out = {}
        for _ in range(self.u32()):
            key = self.str()
            try:
                out[key] = json.loads(self.str())
            except json.JSONDecodeError:
                raise ModelFormatError(f"corrupt value for {key!r}") from None
        return out


def read_model(f, writable=False):
    r = _Reader(f)
    if r.read(4) != MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version = r.u32()
    if version != VERSION:
        raise ModelFormatError(f"unsupported model format version {version} (expected {VERSION})")
    flags = r.u32()
    if flags & ~(FLAG_F32 | FLAG_OPTIM):
        raise ModelFormatError(f"unknown flags {flags:#x}")
    dtype = np.dtype("<f4") if flags & FLAG_F32 else np.dtype("<f8")

    raw = r.kv()
    extra = {k[len("extra."):]: raw.pop(k) for k in list(raw) if k.startswith("extra.")}
    known = set(ModelConfig.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ModelFormatError(f"unknown config fields {sorted(unknown)}")
    try:
        config = ModelConfig.from_dict(raw)
    except (TypeError, ValueError) as exc:
        raise ModelFormatError(f"invalid config block: {exc}") from None

    vocabs = {}
    for _ in range(r.u32()):
        name = r.str()
        tokens = [r.str() for _ in range(r.u32())]
        if tuple(tokens[:len(SPECIALS)]) != SPECIALS:
            raise ModelFormatError(f"vocab {name!r} lacks the reserved specials")
        vocabs[name] = Vocab(tokens[len(SPECIALS):])

    params = {}
    for _ in range(r.u32()):
        name = r.str()
        ndim = struct.unpack("<B", r.read(1))[0]
        shape = tuple(r.u32() for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.read(count * dtype.itemsize), dtype=dtype).reshape(shape)
        if arr.dtype != arr.dtype.newbyteorder("="):
            arr = arr.astype(arr.dtype.newbyteorder("="))
        params[name] = arr.copy() if writable else arr

    optimizer = r.kv() if flags & FLAG_OPTIM else None
    expected = r.crc
    stored = f.read(4)
    if len(stored) != 4:
        raise ModelFormatError("truncated model file")
    if struct.unpack("<I", stored)[0] != expected:
        raise ModelFormatError("checksum mismatch (corrupt model file)")
    if f.read(1):
        raise ModelFormatError("trailing bytes after model file")
    return ModelFile(config, vocabs, params, optimizer, 32 if flags & FLAG_F32 else 64, extra)


def load_model(path, writable=False):
    with open(path, "rb") as f:
        return read_model(f, writable)
