"""Deterministic synthetic dataset generator.

Each sample is a CT-like volume containing one axis-aligned ellipsoidal organ
per region, placed on a disjoint cell grid so masks never overlap and organ
bounding boxes are analytically known. Organ intensity follows a smooth radial
profile computed from organ-local integer offsets, so two organs with the same
shape at different positions have bit-identical voxel content. Abnormalities
are injected as small high-intensity blobs inside the organ and mirrored in
the region report text and the sample's ground-truth label vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .areas import AREA_VOCABULARY, DEFAULT_ABNORMALITIES
from .errors import ValidationError
from .volume_io import LabelVector, RegionMask, RegionSet, Volume, save_mask, save_volume

BACKGROUND = -1000.0
LESION_BOOST = 400.0
PROFILE_AMPLITUDE = 150.0
RIPPLE_AMPLITUDE = 60.0

NORMAL_TEMPLATE = "The {area} is normal."
ABNORMAL_TEMPLATE = "{abnormality} is observed in the {area}."


@dataclass
class SynthConfig:
    n_samples: int = 4
    dims: tuple[int, int, int] = (32, 32, 16)
    regions_per_sample: int = 3
    p_abnormal: float = 0.2
    abnormalities: tuple[str, ...] = DEFAULT_ABNORMALITIES
    spacing: tuple[float, float, float] = (1.0, 1.0, 3.0)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        self.abnormalities = tuple(self.abnormalities)
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValidationError(f"dims must be 3 positive ints, got {self.dims}")
        if not 1 <= self.regions_per_sample <= len(AREA_VOCABULARY):
            raise ValidationError(
                f"regions_per_sample must be in 1..{len(AREA_VOCABULARY)}, got {self.regions_per_sample}"
            )
        if not 0.0 <= self.p_abnormal <= 1.0:
            raise ValidationError(f"p_abnormal must be in [0,1], got {self.p_abnormal}")
        if len(self.abnormalities) < 1:
            raise ValidationError("abnormality vocabulary is empty")


@dataclass
class OrganSpec:
    """Analytic description of one rendered organ; the oracle for its mask."""

    area_name: str
    center: tuple[int, int, int]
    semi_axes: tuple[float, float, float]
    base_intensity: float
    ripple_freq: int = 1
    abnormalities: list[str] = field(default_factory=list)

    @property
    def bbox_lo(self) -> tuple[int, int, int]:
        return tuple(int(math.ceil(c - a)) for c, a in zip(self.center, self.semi_axes))

    @property
    def bbox_hi(self) -> tuple[int, int, int]:
        # exclusive upper bound
        return tuple(int(math.floor(c + a)) + 1 for c, a in zip(self.center, self.semi_axes))


def _cell_grid(dims: tuple[int, int, int], n: int) -> list[tuple[tuple[int, int], ...]]:
    """Partition the volume into >= n disjoint cells, each at least 5 voxels wide."""
    best = None
    for gx in range(1, 4):
        for gy in range(1, 4):
            for gz in range(1, 4):
                if gx * gy * gz < n:
                    continue
                cells = (gx, gy, gz)
                widths = [dims[d] // cells[d] for d in range(3)]
                if min(widths) < 5:
                    continue
                score = (gx * gy * gz, -min(widths))
                if best is None or score < best[0]:
                    best = (score, cells)
    if best is None:
        raise ValidationError(
            f"cannot place {n} disjoint organs in a {dims} volume; every cell needs >= 5 voxels per axis"
        )
    cells = best[1]
    out = []
    for ix in range(cells[0]):
        for iy in range(cells[1]):
            for iz in range(cells[2]):
                bounds = []
                for d, i in zip(range(3), (ix, iy, iz)):
                    w = dims[d] // cells[d]
                    lo = i * w
                    hi = dims[d] if i == cells[d] - 1 else lo + w
                    bounds.append((lo, hi))
                out.append(tuple(bounds))
    return out


def _ellipsoid_r2(shape, center, semi_axes, origin):
    """Squared normalized radius on a sub-grid, from organ-local integer offsets."""
    axes = []
    for d in range(3):
        coords = np.arange(origin[d], origin[d] + shape[d], dtype=np.float64) - center[d]
        axes.append(coords / semi_axes[d])
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return gx * gx + gy * gy + gz * gz


def _render_organ(volume: np.ndarray, spec: OrganSpec, lesion_offsets) -> np.ndarray:
    """Paint one organ into the volume; returns its binary mask (full dims)."""
    lo, hi = spec.bbox_lo, spec.bbox_hi
    box = tuple(slice(l, h) for l, h in zip(lo, hi))
    shape = tuple(h - l for l, h in zip(lo, hi))
    r2 = _ellipsoid_r2(shape, spec.center, spec.semi_axes, lo)
    inside = r2 <= 1.0
    # radial profile plus an area-characteristic ripple; both depend only on
    # organ-local offsets, so translated twins render bit-identically
    values = (
        spec.base_intensity
        + PROFILE_AMPLITUDE * (1.0 - r2)
        + RIPPLE_AMPLITUDE * np.cos(np.pi * spec.ripple_freq * r2)
    )
    region = volume[box]  # view
    region[inside] = values[inside].astype(np.float32)

    for offset, radii in lesion_offsets:
        lcenter = tuple(c + o for c, o in zip(spec.center, offset))
        lr2 = _ellipsoid_r2(shape, lcenter, radii, lo)
        blob = (lr2 <= 1.0) & inside  # lesions never escape the organ
        region[blob] += LESION_BOOST

    mask = np.zeros(volume.shape, dtype=np.uint8)
    mask[box][inside] = 1
    return mask


def _draw_organ(rng: np.random.Generator, area: str, area_idx: int, cell) -> OrganSpec:
    semi = []
    center = []
    for lo, hi in cell:
        half = (hi - lo - 1) / 2.0
        max_a = half - 1.0  # keep a one-voxel gap to the cell wall
        if max_a < 1.0:
            raise ValidationError(f"cell {cell} too small for an organ")
        a = float(rng.uniform(max(1.0, 0.5 * max_a), max_a))
        jitter_room = int(math.floor(half - a))
        jitter = int(rng.integers(-jitter_room, jitter_room + 1)) if jitter_room > 0 else 0
        c = (lo + hi - 1) // 2 + jitter
        semi.append(a)
        center.append(int(c))
    # wide per-area intensity separation so areas stay distinguishable after windowing
    base = -700.0 + 160.0 * area_idx + float(rng.uniform(-20.0, 20.0))
    return OrganSpec(area_name=area, center=tuple(center), semi_axes=tuple(semi),
                     base_intensity=base, ripple_freq=1 + area_idx % 5)


def _draw_lesions(rng: np.random.Generator, spec: OrganSpec, abnormalities, p: float):
    fired = []
    offsets = []
    for name in abnormalities:
        if rng.random() < p:
            fired.append(name)
            radii = tuple(max(1.0, a / 3.0) for a in spec.semi_axes)
            off = tuple(
                int(round(float(rng.uniform(-0.4, 0.4)) * (a - r)))
                for a, r in zip(spec.semi_axes, radii)
            )
            offsets.append((off, radii))
    return fired, offsets


def region_report(area: str, abnormalities: list[str]) -> str:
    if not abnormalities:
        return NORMAL_TEMPLATE.format(area=area)
    sentences = [ABNORMAL_TEMPLATE.format(abnormality=a.capitalize(), area=area) for a in abnormalities]
    return " ".join(sentences)


def build_sample(cfg: SynthConfig, rng: np.random.Generator):
    """Render one sample in memory: (Volume, RegionSet, reports, labels, organ specs)."""
    area_indices = sorted(rng.choice(len(AREA_VOCABULARY), size=cfg.regions_per_sample, replace=False))
    cells = _cell_grid(cfg.dims, cfg.regions_per_sample)
    cell_order = rng.permutation(len(cells))[: cfg.regions_per_sample]

    volume = np.full(cfg.dims, BACKGROUND, dtype=np.float32)
    masks, reports, specs = [], {}, []
    flags = [False] * len(cfg.abnormalities)
    for j, ai in enumerate(area_indices):
        area = AREA_VOCABULARY[int(ai)]
        spec = _draw_organ(rng, area, int(ai), cells[int(cell_order[j])])
        fired, lesions = _draw_lesions(rng, spec, cfg.abnormalities, cfg.p_abnormal)
        spec.abnormalities = fired
        mask = _render_organ(volume, spec, lesions)
        masks.append(RegionMask(data=mask, area_name=area))
        reports[area] = region_report(area, fired)
        for name in fired:
            flags[cfg.abnormalities.index(name)] = True
        specs.append(spec)

    vol = Volume(data=volume, spacing=cfg.spacing)
    labels = LabelVector(tuple(flags), vocabulary_size=len(cfg.abnormalities))
    return vol, RegionSet(regions=masks), reports, labels, specs


def synthesize_dataset(cfg: SynthConfig, seed: int, out_dir) -> Path:
    """Write volumes, masks, manifest, and analytic metadata; returns the manifest path.

    Deterministic: identical (cfg, seed) produce byte-identical files.
    """
    out_dir = Path(out_dir)
    (out_dir / "volumes").mkdir(parents=True, exist_ok=True)
    (out_dir / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    records = []
    meta_samples = {}
    for i in range(cfg.n_samples):
        sid = f"s{i:04d}"
        vol, regions, reports, labels, specs = build_sample(cfg, rng)
        vol_rel = f"volumes/{sid}.vol"
        save_volume(vol, out_dir / vol_rel)
        mask_entries = []
        for mask in regions:
            rel = f"masks/{sid}_{mask.area_name}.msk"
            save_mask(mask, out_dir / rel, spacing=cfg.spacing)
            mask_entries.append({"area": mask.area_name, "path": rel})
        records.append(
            {
                "sample_id": sid,
                "volume": vol_rel,
                "masks": mask_entries,
                "reports": reports,
                "labels": list(labels),
            }
        )
        meta_samples[sid] = {
            s.area_name: {
                "center": list(s.center),
                "semi_axes": list(s.semi_axes),
                "bbox_lo": list(s.bbox_lo),
                "bbox_hi": list(s.bbox_hi),
                "abnormalities": list(s.abnormalities),
            }
            for s in specs
        }

    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(json.dumps(records, sort_keys=True, indent=1) + "\n")
    meta = {
        "seed": int(seed),
        "config": {
            "n_samples": cfg.n_samples,
            "dims": list(cfg.dims),
            "regions_per_sample": cfg.regions_per_sample,
            "p_abnormal": cfg.p_abnormal,
            "abnormalities": list(cfg.abnormalities),
            "spacing": list(cfg.spacing),
        },
        "samples": meta_samples,
    }
    (out_dir / "dataset_meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return manifest_path


def make_twin_sample(
    dims: tuple[int, int, int] = (32, 32, 16),
    areas: tuple[str, str] = ("heart", "lungs"),
    semi_axes: tuple[float, float, float] = (4.0, 4.0, 3.0),
    translation: tuple[int, int, int] = (12, 0, 0),
    base_intensity: float = 300.0,
):
    """Two organs identical up to a whole-voxel translation, for decoupling checks.

    Returns (Volume, RegionSet, [OrganSpec, OrganSpec]).
    """
    c0 = tuple(int(math.ceil(a)) + 1 for a in semi_axes)
    c1 = tuple(c + t for c, t in zip(c0, translation))
    specs = [
        OrganSpec(areas[0], c0, tuple(semi_axes), base_intensity),
        OrganSpec(areas[1], c1, tuple(semi_axes), base_intensity),
    ]
    for s in specs:
        if any(l < 0 for l in s.bbox_lo) or any(h > d for h, d in zip(s.bbox_hi, dims)):
            raise ValidationError(f"twin organ {s.area_name} does not fit inside dims {dims}")
    overlaps = all(
        a_lo < b_hi and b_lo < a_hi
        for a_lo, a_hi, b_lo, b_hi in zip(specs[0].bbox_lo, specs[0].bbox_hi,
                                          specs[1].bbox_lo, specs[1].bbox_hi)
    )
    if overlaps:
        raise ValidationError("twin organs overlap; increase the translation")

    volume = np.full(dims, BACKGROUND, dtype=np.float32)
    masks = [RegionMask(_render_organ(volume, s, []), area_name=s.area_name) for s in specs]
    return Volume(data=volume), RegionSet(regions=masks), specs
