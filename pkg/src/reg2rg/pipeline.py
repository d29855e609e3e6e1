"""Local feature decoupling preprocessing.

The texture path masks the volume, crops it to the region's tight bounding
box, resamples the crop to a fixed encoder input size, and normalizes
intensities. The geometry path resamples the *uncropped* binary mask, keeping
the region's original size and position. Translated copies of the same organ
therefore produce identical texture inputs but different geometry inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyRegionError, ValidationError
from .volume_io import RegionMask, Volume, normalize_intensity


@dataclass
class PipelineConfig:
    texture_input_dims: tuple[int, int, int] = (32, 32, 16)
    geometry_input_dims: tuple[int, int, int] = (32, 32, 16)
    margin: int = 0
    window: tuple[float, float] = (-1000.0, 1000.0)

    def __post_init__(self):
        self.texture_input_dims = tuple(int(d) for d in self.texture_input_dims)
        self.geometry_input_dims = tuple(int(d) for d in self.geometry_input_dims)
        for dims in (self.texture_input_dims, self.geometry_input_dims):
            if len(dims) != 3 or min(dims) < 1:
                raise ValidationError(f"input dims must be 3 positive ints, got {dims}")
        if self.margin < 0:
            raise ValidationError("margin must be >= 0")
        if self.window[0] >= self.window[1]:
            raise ValidationError(f"window lo must be < hi, got {self.window}")


@dataclass(frozen=True)
class BoundingBox:
    lo: tuple[int, int, int]  # inclusive
    hi: tuple[int, int, int]  # exclusive

    def __post_init__(self):
        if any(l >= h for l, h in zip(self.lo, self.hi)):
            raise ValidationError(f"degenerate bounding box lo={self.lo} hi={self.hi}")

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.lo, self.hi))

    def slices(self) -> tuple[slice, slice, slice]:
        return tuple(slice(l, h) for l, h in zip(self.lo, self.hi))


@dataclass
class TextureInput:
    """Cropped+masked region content resampled to the texture encoder dims."""

    grid: np.ndarray
    source_box: BoundingBox


@dataclass
class GeometryInput:
    """Uncropped binary mask resampled to the geometry encoder dims."""

    grid: np.ndarray


def apply_mask(v: Volume, m: RegionMask) -> Volume:
    """Element-wise product of volume and mask."""
    if v.dims != m.dims:
        raise ValidationError(f"volume dims {v.dims} != mask dims {m.dims}")
    return Volume(data=v.data * m.data, spacing=v.spacing)


def bounding_box(m: RegionMask, margin: int = 0) -> BoundingBox:
    """Tightest box around the mask's foreground, grown by margin and clipped."""
    idx = np.nonzero(m.data)
    if idx[0].size == 0:
        raise EmptyRegionError(f"region {m.area_name!r} has no foreground voxels")
    lo, hi = [], []
    for d in range(3):
        lo.append(max(0, int(idx[d].min()) - margin))
        hi.append(min(m.data.shape[d], int(idx[d].max()) + 1 + margin))
    return BoundingBox(lo=tuple(lo), hi=tuple(hi))


def crop(v: Volume, box: BoundingBox) -> Volume:
    if any(l < 0 for l in box.lo) or any(h > d for h, d in zip(box.hi, v.dims)):
        raise ValidationError(f"box {box} out of range for dims {v.dims}")
    return Volume(data=v.data[box.slices()].copy(), spacing=v.spacing)


def _axis_coords(src: int, dst: int) -> np.ndarray:
    # align-corners mapping: endpoint voxels land on endpoint voxels
    if dst == 1:
        return np.full(1, (src - 1) / 2.0)
    return np.arange(dst, dtype=np.float64) * ((src - 1) / (dst - 1))


def _lerp_axis(data: np.ndarray, axis: int, coords: np.ndarray) -> np.ndarray:
    src = data.shape[axis]
    i0 = np.floor(coords).astype(np.int64)
    i0 = np.clip(i0, 0, max(src - 2, 0))
    i1 = np.minimum(i0 + 1, src - 1)
    w = (coords - i0).astype(data.dtype if data.dtype.kind == "f" else np.float64)
    a = np.take(data, i0, axis=axis)
    b = np.take(data, i1, axis=axis)
    shape = [1, 1, 1]
    shape[axis] = len(coords)
    w = w.reshape(shape)
    # a + w*(b-a) keeps constants bit-exact
    return a + w * (b - a)


def resample(v: Volume, target_dims: tuple[int, int, int], mode: str = "trilinear") -> Volume:
    """Resample onto target dims; trilinear for intensities, nearest for masks."""
    target_dims = tuple(int(d) for d in target_dims)
    if len(target_dims) != 3 or min(target_dims) < 1:
        raise ValidationError(f"target dims must be 3 positive ints, got {target_dims}")
    if mode == "trilinear":
        out = v.data.astype(np.float64)
        for axis in range(3):
            out = _lerp_axis(out, axis, _axis_coords(v.dims[axis], target_dims[axis]))
        return Volume(data=out.astype(np.float32), spacing=v.spacing)
    if mode == "nearest":
        out = v.data
        for axis in range(3):
            coords = np.rint(_axis_coords(v.dims[axis], target_dims[axis])).astype(np.int64)
            out = np.take(out, np.clip(coords, 0, v.dims[axis] - 1), axis=axis)
        return Volume(data=out.astype(np.float32), spacing=v.spacing)
    raise ValidationError(f"unknown resampling mode {mode!r}")


def resample_mask(m: RegionMask, target_dims: tuple[int, int, int]) -> RegionMask:
    out = resample(Volume(data=m.data.astype(np.float32)), target_dims, mode="nearest")
    return RegionMask(data=out.data.astype(np.uint8), area_name=m.area_name)


def prepare_texture_input(v: Volume, m: RegionMask, cfg: PipelineConfig) -> TextureInput:
    """mask -> tight crop -> trilinear resample -> window-normalize."""
    box = bounding_box(m, cfg.margin)
    masked = apply_mask(v, m)
    grid = resample(crop(masked, box), cfg.texture_input_dims, mode="trilinear")
    grid = normalize_intensity(grid, cfg.window)
    return TextureInput(grid=grid.data, source_box=box)


def prepare_geometry_input(m: RegionMask, cfg: PipelineConfig) -> GeometryInput:
    """Nearest-neighbor resample of the full-extent mask; never cropped."""
    out = resample_mask(m, cfg.geometry_input_dims)
    return GeometryInput(grid=out.data)


def prepare_global_input(v: Volume, cfg: PipelineConfig) -> np.ndarray:
    """Whole volume resampled to the texture dims and window-normalized."""
    grid = resample(v, cfg.texture_input_dims, mode="trilinear")
    return normalize_intensity(grid, cfg.window).data
