"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic      8 bytes   b"DCMCCKPT"
    version    u32       currently 1
    header_len u32       length of the UTF-8 JSON header that follows
    header     bytes     JSON object, sorted keys (config echo + metadata)
    count      u32       number of tensor records
    record*    count times:
        kind     u8      0 parameter, 1 buffer, 2 adam first moment,
                         3 adam second moment, 4 adam step count (0-d)
        name_len u16
        name     bytes   UTF-8
        ndim     u8
        dims     u64 * ndim
        data     f64 * prod(dims), little-endian, row-major

Records appear in parameter insertion order: every parameter, then every
buffer, then (m, v, t) per parameter.  No timestamps are written, so equal
stores produce byte-identical files.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .params import AdamState, ParamStore
from .tensor import Tensor

MAGIC = b"DCMCCKPT"
VERSION = 1
PARAM, BUFFER, ADAM_M, ADAM_V, ADAM_T = range(5)


class CheckpointError(ValueError):
    pass


def _record(kind: int, name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    nb = name.encode("utf-8")
    head = struct.pack("<BH", kind, len(nb)) + nb + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return head + arr.tobytes(order="C")


def dumps(store: ParamStore, header: dict | None = None) -> bytes:
    records = []
    for name, t in store.params.items():
        records.append(_record(PARAM, name, t.data))
    for name, b in store.buffers.items():
        records.append(_record(BUFFER, name, b))
    for name in store.params:
        st = store.adam[name]
        records.append(_record(ADAM_M, name, st.m))
        records.append(_record(ADAM_V, name, st.v))
        records.append(_record(ADAM_T, name, np.array(float(st.t))))
    hj = json.dumps(header or {}, sort_keys=True).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(hj)), hj, struct.pack("<I", len(records))]
    return b"".join(out + records)


def loads(blob: bytes) -> tuple[ParamStore, dict]:
    try:
        return _loads(blob)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt or truncated checkpoint: {exc}") from exc


def _loads(blob: bytes) -> tuple[ParamStore, dict]:
    if blob[:8] != MAGIC:
        raise CheckpointError("not a DCMC checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", blob, 8)
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    pos = 16
    header = json.loads(blob[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    (count,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    store = ParamStore()
    moments: dict[str, dict[int, np.ndarray]] = {}
    for _ in range(count):
        kind, nlen = struct.unpack_from("<BH", blob, pos)
        pos += 3
        name = blob[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", blob, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", blob, pos)
        pos += 8 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
        if pos > len(blob):
            raise CheckpointError("truncated checkpoint")
        if kind == PARAM:
            store.params[name] = Tensor(arr, requires_grad=True, op=name)
        elif kind == BUFFER:
            store.buffers[name] = arr
        elif kind in (ADAM_M, ADAM_V, ADAM_T):
            moments.setdefault(name, {})[kind] = arr
        else:
            raise CheckpointError(f"unknown record kind {kind}")
    if pos != len(blob):
        raise CheckpointError("trailing bytes after the last record")
    for name, t in store.params.items():
        mom = moments.get(name, {})
        store.adam[name] = AdamState(
            mom.get(ADAM_M, np.zeros_like(t.data)),
            mom.get(ADAM_V, np.zeros_like(t.data)),
            int(mom[ADAM_T].item()) if ADAM_T in mom else 0,
        )
    return store, header


def save(path: str | Path, store: ParamStore, header: dict | None = None) -> None:
    Path(path).write_bytes(dumps(store, header))


def load(path: str | Path) -> tuple[ParamStore, dict]:
    return loads(Path(path).read_bytes())
