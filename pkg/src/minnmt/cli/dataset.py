"""Binarized parallel corpus.

Layout: b"MNDS", u32 version, u32 pair count, u32 source lengths,
u32 target lengths, u32 source ids (concatenated), u32 target ids, and a
trailing crc32 of everything before it.  All little-endian.
"""

import struct
import zlib

import numpy as np

from ..fileio import atomic_write

MAGIC = b"MNDS"
VERSION = 1


class DatasetFormatError(ValueError):
    pass


def dumps_dataset(pairs):
    src_len = np.array([len(s) for s, _ in pairs], dtype="<u4")
    tgt_len = np.array([len(t) for _, t in pairs], dtype="<u4")
    src = np.array([i for s, _ in pairs for i in s], dtype="<u4")
    tgt = np.array([i for _, t in pairs for i in t], dtype="<u4")
    body = b"".join([MAGIC, struct.pack("<II", VERSION, len(pairs)),
                     src_len.tobytes(), tgt_len.tobytes(), src.tobytes(), tgt.tobytes()])
    return body + struct.pack("<I", zlib.crc32(body))


def save_dataset(path, pairs):
    atomic_write(path, dumps_dataset(pairs))


def loads_dataset(data):
    if len(data) < 16 or data[:4] != MAGIC:
        raise DatasetFormatError("not a binarized dataset (bad magic)")
    version, n = struct.unpack_from("<II", data, 4)
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version} (expected {VERSION})")
    if struct.unpack("<I", data[-4:])[0] != zlib.crc32(data[:-4]):
        raise DatasetFormatError("checksum mismatch (corrupt or truncated dataset)")
    arr = np.frombuffer(data[12:-4], dtype="<u4").astype(np.int64)
    if arr.size < 2 * n:
        raise DatasetFormatError("truncated dataset")
    src_len, tgt_len = arr[:n], arr[n:2 * n]
    ids = arr[2 * n:]
    if ids.size != src_len.sum() + tgt_len.sum():
        raise DatasetFormatError("dataset length table does not match its payload")
    src_ids, tgt_ids = ids[:src_len.sum()], ids[src_len.sum():]
    src_off = np.concatenate([[0], np.cumsum(src_len)])
    tgt_off = np.concatenate([[0], np.cumsum(tgt_len)])
    return [(src_ids[src_off[i]:src_off[i + 1]].tolist(), tgt_ids[tgt_off[i]:tgt_off[i + 1]].tolist())
            for i in range(n)]


def load_dataset(path):
    with open(path, "rb") as f:
        return loads_dataset(f.read())
