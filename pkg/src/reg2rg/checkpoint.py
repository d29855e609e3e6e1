"""Flat tensor-blob checkpoint format.

Layout: 8-byte magic, u64 little-endian header length, UTF-8 JSON header,
then the concatenated raw little-endian tensor payloads. The header carries
per-tensor dtype/shape/offset plus a free-form JSON ``meta`` block (config
hash, step counters, rng states). Round trips are bit-exact.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import VolumeFormatError

MAGIC = b"RGCKPT01"

_DTYPE_TAGS = {
    np.dtype("<f4"): "f32",
    np.dtype("<f8"): "f64",
    np.dtype("<i8"): "i64",
    np.dtype("u1"): "u8",
}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def save_tensors(path, tensors: dict[str, np.ndarray], meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = {}
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        dtype = arr.dtype.newbyteorder("<") if arr.dtype.byteorder == ">" else arr.dtype
        arr = arr.astype(dtype, copy=False)
        if arr.dtype not in _DTYPE_TAGS:
            raise VolumeFormatError(f"unsupported checkpoint dtype {arr.dtype} for {name!r}")
        raw = arr.tobytes()
        entries[name] = {
            "dtype": _DTYPE_TAGS[arr.dtype],
            "shape": list(arr.shape),
            "offset": offset,
            "nbytes": len(raw),
        }
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"meta": meta or {}, "tensors": entries}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(header)))
        f.write(header)
        for raw in blobs:
            f.write(raw)


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise VolumeFormatError(f"{path} is not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) : len(MAGIC) + 8])
    start = len(MAGIC) + 8
    try:
        header = json.loads(raw[start : start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"malformed checkpoint header in {path}: {e}") from e
    payload = raw[start + hlen :]
    tensors = {}
    for name, entry in header["tensors"].items():
        dtype = _TAG_DTYPES[entry["dtype"]]
        chunk = payload[entry["offset"] : entry["offset"] + entry["nbytes"]]
        if len(chunk) != entry["nbytes"]:
            raise VolumeFormatError(f"checkpoint payload truncated at tensor {name!r}")
        tensors[name] = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).copy()
    return tensors, header.get("meta", {})
