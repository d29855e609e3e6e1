"""Volume and mask data model plus bit-exact file I/O.

Grids are stored as raw little-endian payloads (float32 for volumes, uint8
for masks) with a JSON sidecar header at ``<path>.json`` describing dims,
spacing, dtype, and memory order. The payload is written in C order with
dims [H, W, D], so the last axis (D) varies fastest.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .areas import check_area
from .errors import ValidationError, VolumeFormatError

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}
_ORDER = "row-major, D fastest"


@dataclass
class Volume:
    """Dense 3D scalar grid with voxel spacing in mm."""

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ValidationError(f"volume must be 3D with all dims >= 1, got shape {self.data.shape}")
        if not np.isfinite(self.data).all():
            raise ValidationError("volume contains non-finite values")
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or any(s <= 0 for s in self.spacing):
            raise ValidationError(f"spacing must be 3 positive values, got {self.spacing}")

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class RegionMask:
    """Binary grid naming one anatomical area, same dims as its volume."""

    data: np.ndarray
    area_name: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.uint8)
        if self.data.ndim != 3:
            raise ValidationError(f"mask must be 3D, got shape {self.data.shape}")
        bad = np.setdiff1d(np.unique(self.data), [0, 1])
        if bad.size:
            raise ValidationError(f"mask values must be 0/1, found {bad.tolist()}")
        check_area(self.area_name)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.data.shape


@dataclass
class RegionSet:
    """Ordered collection of region masks for one sample."""

    regions: list[RegionMask] = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= len(self.regions) <= 10:
            raise ValidationError(f"a sample carries 1..10 regions, got {len(self.regions)}")
        names = [r.area_name for r in self.regions]
        if len(set(names)) != len(names):
            raise ValidationError(f"duplicate area names in region set: {names}")

    @property
    def area_names(self) -> list[str]:
        return [r.area_name for r in self.regions]

    def __len__(self) -> int:
        return len(self.regions)

    def __iter__(self):
        return iter(self.regions)


@dataclass
class LabelVector:
    """Binary abnormality flags indexed by a fixed label vocabulary."""

    flags: tuple[bool, ...]
    vocabulary_size: int = 18

    def __post_init__(self):
        self.flags = tuple(bool(f) for f in self.flags)
        if len(self.flags) != self.vocabulary_size:
            raise ValidationError(
                f"label vector length {len(self.flags)} != vocabulary size {self.vocabulary_size}"
            )

    def __iter__(self):
        return iter(self.flags)

    def __len__(self) -> int:
        return len(self.flags)


def _header_path(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _save_grid(data: np.ndarray, path: Path, dtype_tag: str, spacing) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(data, dtype=_DTYPES[dtype_tag])
    header = {
        "dims": [int(d) for d in data.shape],
        "spacing": [float(s) for s in spacing],
        "dtype": dtype_tag,
        "order": _ORDER,
    }
    path.write_bytes(payload.tobytes())
    _header_path(path).write_text(json.dumps(header, sort_keys=True, indent=1) + "\n")


def _load_grid(path: Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    hpath = _header_path(path)
    if not hpath.exists():
        raise VolumeFormatError(f"missing sidecar header: {hpath}")
    try:
        header = json.loads(hpath.read_text())
        dims = [int(d) for d in header["dims"]]
        dtype_tag = header["dtype"]
        spacing = [float(s) for s in header["spacing"]]
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise VolumeFormatError(f"malformed header {hpath}: {e}") from e
    if dtype_tag not in _DTYPES:
        raise VolumeFormatError(f"unsupported dtype {dtype_tag!r} in {hpath}")
    dtype = _DTYPES[dtype_tag]
    raw = path.read_bytes()
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"payload-length mismatch for {path}: header declares {expected} bytes, file has {len(raw)}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims).copy()
    header["spacing"] = spacing
    return data, header


def save_volume(v: Volume, path) -> None:
    _save_grid(v.data, Path(path), "f32", v.spacing)


def load_volume(path) -> Volume:
    data, header = _load_grid(Path(path))
    if header["dtype"] != "f32":
        raise VolumeFormatError(f"{path} holds {header['dtype']} data, expected f32")
    if not np.isfinite(data).all():
        raise VolumeFormatError(f"non-finite values in {path}")
    return Volume(data=data, spacing=tuple(header["spacing"]))


def save_mask(m: RegionMask, path, spacing=(1.0, 1.0, 1.0)) -> None:
    _save_grid(m.data, Path(path), "u8", spacing)


def load_mask(path, area_name: str) -> RegionMask:
    data, header = _load_grid(Path(path))
    if header["dtype"] != "u8":
        raise VolumeFormatError(f"{path} holds {header['dtype']} data, expected u8")
    return RegionMask(data=data, area_name=area_name)


def normalize_intensity(v: Volume, window: tuple[float, float] = (-1000.0, 1000.0)) -> Volume:
    """Clip to the window and map it affinely onto [0, 1]."""
    lo, hi = float(window[0]), float(window[1])
    if lo >= hi:
        raise ValidationError(f"window lo must be < hi, got ({lo}, {hi})")
    out = (np.clip(v.data, lo, hi) - lo) / (hi - lo)
    return Volume(data=out.astype(np.float32), spacing=v.spacing)
