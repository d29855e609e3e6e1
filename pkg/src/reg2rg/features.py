"""Preprocessing stage: compute and cache encoder inputs for every sample.

For each region this writes the texture input (masked, cropped, resampled,
normalized), the geometry input (uncropped mask, resampled), and the
no-decoupling fallback (masked volume resampled without cropping); plus one
global input per sample. Regions whose mask is empty are dropped with a
warning and excluded from training targets. Each sample directory carries a
content key hashing the pipeline config and the input payloads.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict
from pathlib import Path

from .errors import EmptyRegionError
from .pipeline import (
    PipelineConfig,
    apply_mask,
    prepare_geometry_input,
    prepare_global_input,
    prepare_texture_input,
    resample,
)
from .volume_io import RegionMask, Volume, load_mask, load_volume, normalize_intensity, save_mask, save_volume

log = logging.getLogger(__name__)


def _content_key(cfg: PipelineConfig, volume_path: Path, mask_paths) -> str:
    h = hashlib.sha256()
    h.update(json.dumps(asdict(cfg), sort_keys=True, default=list).encode())
    h.update(Path(volume_path).read_bytes())
    for _, p in mask_paths:
        h.update(Path(p).read_bytes())
    return h.hexdigest()[:16]


def preprocess_sample(record, cfg: PipelineConfig, out_dir) -> dict:
    """Compute and write one sample's encoder inputs; returns its meta dict."""
    sdir = Path(out_dir) / record.sample_id
    sdir.mkdir(parents=True, exist_ok=True)
    volume = load_volume(record.volume_path)

    areas, source_boxes = [], {}
    for area, mpath in record.mask_paths:
        mask = load_mask(mpath, area)
        try:
            tex = prepare_texture_input(volume, mask, cfg)
        except EmptyRegionError:
            log.warning("sample %s: dropping empty region %r", record.sample_id, area)
            continue
        geo = prepare_geometry_input(mask, cfg)
        masked = resample(apply_mask(volume, mask), cfg.texture_input_dims, mode="trilinear")
        masked = normalize_intensity(masked, cfg.window)
        save_volume(Volume(data=tex.grid), sdir / f"{area}.texture.vol")
        save_mask(RegionMask(data=geo.grid, area_name=area), sdir / f"{area}.geometry.msk")
        save_volume(masked, sdir / f"{area}.masked.vol")
        areas.append(area)
        source_boxes[area] = [list(tex.source_box.lo), list(tex.source_box.hi)]

    save_volume(Volume(data=prepare_global_input(volume, cfg)), sdir / "global.vol")
    meta = {
        "sample_id": record.sample_id,
        "areas": areas,
        "source_boxes": source_boxes,
        "content_key": _content_key(cfg, record.volume_path, record.mask_paths),
    }
    (sdir / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")
    return meta


def preprocess_dataset(records, cfg: PipelineConfig, out_dir) -> list[dict]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metas = [preprocess_sample(rec, cfg, out_dir) for rec in records]
    index = {m["sample_id"]: m["content_key"] for m in metas}
    (out_dir / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1) + "\n")
    return metas
