"""Dataset manifest: one JSON document listing every sample's files and reports.

Records are loaded lazily: only paths are resolved, no volume payload is read.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .areas import AREA_INDEX
from .errors import ValidationError
from .volume_io import LabelVector


@dataclass
class SampleRecord:
    sample_id: str
    volume_path: Path
    mask_paths: list[tuple[str, Path]]  # (area_name, path), ordered
    region_reports: dict[str, str]
    labels: LabelVector

    @property
    def area_names(self) -> list[str]:
        return [area for area, _ in self.mask_paths]


def _validate_record(raw: dict, base: Path, index: int, label_size: int) -> SampleRecord:
    where = f"record {index} (sample_id={raw.get('sample_id')!r})"
    for key in ("sample_id", "volume", "masks", "reports", "labels"):
        if key not in raw:
            raise ValidationError(f"{where}: missing field {key!r}")
    volume_path = base / raw["volume"]
    if not volume_path.exists():
        raise ValidationError(f"{where}: volume path does not resolve: {volume_path}")
    mask_paths = []
    for m in raw["masks"]:
        area = m.get("area")
        if area not in AREA_INDEX:
            raise ValidationError(f"{where}: unknown area name {area!r}")
        mpath = base / m["path"]
        if not mpath.exists():
            raise ValidationError(f"{where}: mask path does not resolve: {mpath}")
        mask_paths.append((area, mpath))
    areas = [a for a, _ in mask_paths]
    if len(set(areas)) != len(areas):
        raise ValidationError(f"{where}: duplicate mask areas {areas}")
    reports = dict(raw["reports"])
    for area in areas:
        if area not in reports:
            raise ValidationError(f"{where}: missing report for area {area!r}")
    for area in reports:
        if area not in AREA_INDEX:
            raise ValidationError(f"{where}: report for unknown area {area!r}")
    labels = raw["labels"]
    if len(labels) != label_size:
        raise ValidationError(f"{where}: expected {label_size} labels, got {len(labels)}")
    return SampleRecord(
        sample_id=str(raw["sample_id"]),
        volume_path=volume_path,
        mask_paths=mask_paths,
        region_reports=reports,
        labels=LabelVector(tuple(bool(x) for x in labels), vocabulary_size=label_size),
    )


def load_manifest(path, label_size: int = 18) -> list[SampleRecord]:
    """Load and validate all records, preserving file order."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ValidationError(f"manifest {path} is not valid JSON: {e}") from e
    if not isinstance(raw, list):
        raise ValidationError(f"manifest {path} must be a top-level array")
    base = path.parent
    records = []
    seen: set[str] = set()
    for i, entry in enumerate(raw):
        rec = _validate_record(entry, base, i, label_size)
        if rec.sample_id in seen:
            raise ValidationError(f"duplicate sample_id {rec.sample_id!r} at record {i}")
        seen.add(rec.sample_id)
        records.append(rec)
    return records


def save_manifest(records: list[dict], path) -> None:
    """Write raw record dicts (paths relative to the manifest directory)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(records, sort_keys=True, indent=1) + "\n")
