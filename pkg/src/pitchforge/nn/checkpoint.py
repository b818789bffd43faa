"""Binary parameter checkpoints.

Layout, little-endian: magic "PCKP", u32 entry count, then per entry
u32 name length + UTF-8 name, u32 rank, u32 dims, f64 data. The optimizer
state follows as a second block in the identical entry format (first and
second moments per parameter, plus a rank-0 "step" entry).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .autodiff import ValueArray
from .optim import ParameterSet

_MAGIC = b"PCKP"


class CheckpointError(ValueError):
    pass


def _pack_entry(name: str, array: np.ndarray) -> bytes:
    encoded = name.encode("utf-8")
    arr = np.asarray(array, dtype="<f8")
    header = struct.pack("<I", len(encoded)) + encoded + struct.pack("<I", arr.ndim)
    header += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return header + arr.tobytes()


def _unpack_entry(raw: bytes, offset: int) -> tuple[str, np.ndarray, int]:
    (name_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    name = raw[offset : offset + name_len].decode("utf-8")
    offset += name_len
    (rank,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    dims = struct.unpack_from(f"<{rank}I", raw, offset)
    offset += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    array = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(dims)
    offset += 8 * count
    return name, array.astype(np.float64), offset


def _pack_block(entries: list[tuple[str, np.ndarray]]) -> bytes:
    return struct.pack("<I", len(entries)) + b"".join(_pack_entry(n, a) for n, a in entries)


def _unpack_block(raw: bytes, offset: int) -> tuple[dict, int]:
    (count,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    out = {}
    for _ in range(count):
        name, array, offset = _unpack_entry(raw, offset)
        out[name] = array
    return out, offset


def save_params(target, params: ParameterSet) -> None:
    adam_entries = [("step", np.array(float(params.step)))]
    for name in params.names():
        adam_entries.append((f"m:{name}", params.adam_m[name]))
        adam_entries.append((f"v:{name}", params.adam_v[name]))
    blob = (
        _MAGIC
        + _pack_block([(n, params[n].data) for n in params.names()])
        + _pack_block(adam_entries)
    )
    if isinstance(target, (str, Path)):
        Path(target).write_bytes(blob)
    else:
        target.write(blob)


def load_params(source) -> ParameterSet:
    raw = Path(source).read_bytes() if isinstance(source, (str, Path)) else source.read()
    if len(raw) < 8 or raw[:4] != _MAGIC:
        raise CheckpointError("not a parameter checkpoint (bad magic)")
    try:
        values, offset = _unpack_block(raw, 4)
        adam, _ = _unpack_block(raw, offset)
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"truncated or corrupt checkpoint: {exc}") from exc
    params = ParameterSet()
    for name, array in values.items():
        params.add(name, ValueArray(array))
        if f"m:{name}" in adam:
            params.adam_m[name] = adam[f"m:{name}"].copy()
        if f"v:{name}" in adam:
            params.adam_v[name] = adam[f"v:{name}"].copy()
    params.step = int(adam.get("step", np.array(0.0)))
    return params
