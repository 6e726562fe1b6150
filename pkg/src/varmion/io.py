"""Binary containers for datasets (``VMDS``) and checkpoints (``VMCK``).

All integers are little-endian. A named array is encoded as::

    u16 name length, UTF-8 name, u8 dtype code, u8 rank, rank x u64 extents, raw values

with dtype code 1 = float64 and 2 = int64. JSON blocks are ``u32 length`` followed
by UTF-8 text written with sorted keys and compact separators, so a decoded
container re-encodes to the same bytes.

VMDS:  magic, u32 version, metadata JSON, arrays until end of file
VMCK:  magic, u32 version, architecture JSON, u32 count + parameter arrays,
       u32 count + optimizer arrays, report JSON
"""
from __future__ import annotations

import io
import json
import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

VERSION = 1
DATASET_MAGIC = b"VMDS"
CHECKPOINT_MAGIC = b"VMCK"
_DTYPES = {1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float64"): 1, np.dtype("int64"): 2}


def dumps_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def _write_json(buf, obj) -> None:
    blob = dumps_json(obj)
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)


def _write_array(buf, name: str, arr) -> None:
    arr = np.asarray(arr)
    if arr.dtype.kind in "iub":
        arr = arr.astype(np.int64)
    elif arr.dtype.kind == "f":
        arr = arr.astype(np.float64)
    code = _CODES.get(arr.dtype)
    if code is None:
        raise FormatError(f"array {name!r} has unsupported dtype {arr.dtype}")
    raw = name.encode("utf-8")
    buf.write(struct.pack("<H", len(raw)))
    buf.write(raw)
    buf.write(struct.pack("<BB", code, arr.ndim))
    buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
    buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("unexpected end of container")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def at_end(self) -> bool:
        return self.pos == len(self.data)

    def json(self):
        (n,) = self.unpack("<I")
        try:
            return json.loads(self.take(n).decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"corrupt JSON block: {exc}") from None

    def array(self):
        (n,) = self.unpack("<H")
        name = self.take(n).decode("utf-8")
        code, rank = self.unpack("<BB")
        if code not in _DTYPES:
            raise FormatError(f"array {name!r} has unknown dtype code {code}")
        shape = self.unpack(f"<{rank}Q") if rank else ()
        dt = _DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        arr = np.frombuffer(self.take(count * dt.itemsize), dtype=dt).reshape(shape)
        return name, arr.astype(dt.newbyteorder("="), copy=True)


def _header(r: _Reader, magic: bytes) -> None:
    got = r.take(4)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"unsupported container version {version}")


def encode_dataset(metadata: dict, arrays: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(DATASET_MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_json(buf, metadata)
    for name, arr in arrays.items():
        _write_array(buf, name, arr)
    return buf.getvalue()


def decode_dataset(data: bytes) -> tuple[dict, dict]:
    r = _Reader(data)
    _header(r, DATASET_MAGIC)
    meta = r.json()
    arrays = {}
    while not r.at_end():
        name, arr = r.array()
        arrays[name] = arr
    return meta, arrays


def encode_checkpoint(architecture: dict, params: dict, optimizer: dict, report: dict) -> bytes:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", VERSION))
    _write_json(buf, architecture)
    for group in (params, optimizer):
        buf.write(struct.pack("<I", len(group)))
        for name, arr in group.items():
            _write_array(buf, name, arr)
    _write_json(buf, report)
    return buf.getvalue()


def decode_checkpoint(data: bytes) -> tuple[dict, dict, dict, dict]:
    r = _Reader(data)
    _header(r, CHECKPOINT_MAGIC)
    arch = r.json()
    groups = []
    for _ in range(2):
        (count,) = r.unpack("<I")
        groups.append(dict(r.array() for _ in range(count)))
    report = r.json()
    if not r.at_end():
        raise FormatError("trailing bytes after checkpoint report")
    return arch, groups[0], groups[1], report


def write_bytes(path, data: bytes) -> None:
    Path(path).write_bytes(data)


def read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise FormatError(str(exc)) from None
