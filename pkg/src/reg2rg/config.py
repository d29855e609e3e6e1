"""Run configuration: section dataclasses, presets, file loading, overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

from .decoder import DecoderConfig, GenerationConfig
from .encoders import EncoderConfig
from .errors import ValidationError
from .pipeline import PipelineConfig
from .synth import SynthConfig
from .trainer import TrainConfig


def _from_dict(cls, data: dict, where: str):
    names = {f.name for f in fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise ValidationError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as e:
        raise ValidationError(f"bad {where} section: {e}") from e


@dataclass
class RunConfig:
    synth: SynthConfig = field(default_factory=SynthConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    seed: int = 0

    _SECTIONS = {
        "synth": SynthConfig,
        "pipeline": PipelineConfig,
        "encoder": EncoderConfig,
        "decoder": DecoderConfig,
        "train": TrainConfig,
        "generation": GenerationConfig,
    }

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        unknown = set(data) - set(cls._SECTIONS) - {"seed"}
        if unknown:
            raise ValidationError(f"unknown top-level config keys: {sorted(unknown)}")
        kwargs = {}
        for name, section_cls in cls._SECTIONS.items():
            kwargs[name] = _from_dict(section_cls, data.get(name, {}), name)
        return cls(seed=int(data.get("seed", 0)), **kwargs)

    def as_dict(self) -> dict:
        out = {name: dataclasses.asdict(getattr(self, name)) for name in self._SECTIONS}
        out["seed"] = self.seed
        return out


# The paper-scale preset documents the full-size configuration; it is not
# runnable on a desk machine and exists as a named reference point.
PRESETS: dict[str, dict] = {
    "desk": {},
    "paper-scale": {
        "synth": {"dims": [256, 256, 64], "regions_per_sample": 10},
        "pipeline": {
            "texture_input_dims": [256, 256, 64],
            "geometry_input_dims": [256, 256, 64],
        },
        "encoder": {
            "patch_size": [32, 32, 8],
            "model_dim": 768,
            "num_layers": 12,
            "num_heads": 12,
            "llm_dim": 4096,
            "mask_patch_size": [32, 32, 8],
            "mask_model_dim": 256,
        },
        "decoder": {
            "vocab_size": 32000,
            "llm_dim": 4096,
            "layers": 32,
            "heads": 32,
            "max_sequence_length": 2048,
        },
        "train": {"lr": 5e-5, "batch_size": 16, "epochs": 6},
    },
}


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for k, v in overlay.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def load_run_config(config_path=None, preset: str = "desk",
                    overrides: dict | None = None) -> RunConfig:
    """Preset base, then config file overlay, then explicit overrides."""
    if preset not in PRESETS:
        raise ValidationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    data = dict(PRESETS[preset])
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            file_data = json.loads(path.read_text())
        except json.JSONDecodeError as e:
            raise ValidationError(f"config file {path} is not valid JSON: {e}") from e
        if not isinstance(file_data, dict):
            raise ValidationError(f"config file {path} must hold a JSON object")
        data = _deep_merge(data, file_data)
    if overrides:
        data = _deep_merge(data, overrides)
    return RunConfig.from_dict(data)
