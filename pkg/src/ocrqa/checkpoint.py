"""Flat binary checkpoints for named float64 parameter sets.

File layout, in order:

  1. 8-byte magic ``b"OCRQA\\x00\\x01\\x00"`` (format version 1),
  2. manifest length as an unsigned 64-bit little-endian integer,
  3. the manifest: UTF-8 JSON with keys ``order`` (parameter names in
     buffer order) and ``params`` (name -> {"shape": [...], "offset": N,
     "count": N}), offsets counted in float64 elements from the start of
     the data region,
  4. the data region: each parameter's buffer as consecutive
     little-endian float64 (``<f8``) values, row-major, concatenated in
     ``order`` with no padding.

Round-tripping preserves every bit: values are written with ``tobytes``
and read back with ``frombuffer`` on the same ``<f8`` dtype.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import ValidationError
from .tensor import Tensor

__all__ = ["save_params", "load_params", "MAGIC"]

MAGIC = b"OCRQA\x00\x01\x00"
_DTYPE = np.dtype("<f8")


def save_params(path, params: dict[str, Tensor]) -> None:
    """Write ``params`` (name -> Tensor) to ``path`` in the flat format."""
    order = list(params.keys())
    manifest: dict[str, object] = {"order": order, "params": {}}
    offset = 0
    buffers = []
    for name in order:
        arr = params[name].data
        count = int(arr.size)
        manifest["params"][name] = {
            "shape": [int(s) for s in arr.shape],
            "offset": offset,
            "count": count,
        }
        buffers.append(np.ascontiguousarray(arr, dtype=_DTYPE).tobytes())
        offset += count
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for buf in buffers:
            fh.write(buf)


def load_params(path) -> dict[str, Tensor]:
    """Read a checkpoint back into name -> Tensor (requires_grad=True),
    preserving manifest order and every bit of every value."""
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) + 8:
        raise ValidationError(f"checkpoint {path}: truncated header")
    if raw[:len(MAGIC)] != MAGIC:
        raise ValidationError(f"checkpoint {path}: bad magic")
    mlen = int.from_bytes(raw[len(MAGIC):len(MAGIC) + 8], "little")
    mstart = len(MAGIC) + 8
    if mstart + mlen > len(raw):
        raise ValidationError(f"checkpoint {path}: manifest extends past end of file")
    try:
        manifest = json.loads(raw[mstart:mstart + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ValidationError(f"checkpoint {path}: unreadable manifest: {e}") from e
    if not isinstance(manifest, dict) or "order" not in manifest or "params" not in manifest:
        raise ValidationError(f"checkpoint {path}: manifest missing order/params")
    order = manifest["order"]
    entries = manifest["params"]
    if sorted(order) != sorted(entries.keys()):
        raise ValidationError(f"checkpoint {path}: order and params disagree")

    data_start = mstart + mlen
    data = raw[data_start:]
    if len(data) % _DTYPE.itemsize:
        raise ValidationError(f"checkpoint {path}: data region is not a whole "
                              f"number of float64 values")
    values = np.frombuffer(data, dtype=_DTYPE)

    out: dict[str, Tensor] = {}
    expected_offset = 0
    for name in order:
        entry = entries[name]
        shape = tuple(int(s) for s in entry["shape"])
        offset = int(entry["offset"])
        count = int(entry["count"])
        if offset != expected_offset:
            raise ValidationError(f"checkpoint {path}: parameter {name!r} offset "
                                  f"{offset} != expected {expected_offset}")
        prod = 1
        for s in shape:
            prod *= s
        if prod != count:
            raise ValidationError(f"checkpoint {path}: parameter {name!r} shape "
                                  f"{shape} does not contain {count} values")
        if offset + count > values.size:
            raise ValidationError(f"checkpoint {path}: parameter {name!r} extends "
                                  f"past end of data region")
        arr = values[offset:offset + count].reshape(shape).copy()
        out[name] = Tensor(arr, requires_grad=True)
        expected_offset += count
    if expected_offset != values.size:
        raise ValidationError(f"checkpoint {path}: {values.size - expected_offset} "
                              f"trailing values not covered by the manifest")
    return out
