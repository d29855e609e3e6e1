"""End-to-end model container and per-sample sequence assembly."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .decoder import DecoderConfig, GenerationConfig, ReportDecoder
from .encoders import EncoderConfig, FeatureEncoders, LocalFeature
from .errors import ValidationError
from .prompt import (
    DEFAULT_INSTRUCTION,
    RegionAssignment,
    TokenEmbedder,
    build_prompt,
    canonical_assignment,
    parse_generated,
    serialize_target,
    shuffle_regions,
    substitute_embeddings,
)
from .tokenizer import Tokenizer
from .volume_io import load_mask, load_volume


def config_hash(*objs) -> str:
    blob = json.dumps([getattr(o, "__dict__", o) for o in objs], sort_keys=True, default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


@dataclass
class AblationFlags:
    use_geometry: bool = True
    use_global: bool = True
    use_rra: bool = True
    use_lfd: bool = True


@dataclass
class SampleFeatures:
    """Preprocessed encoder inputs for one sample."""

    sample_id: str
    areas: list[str]
    texture: dict[str, np.ndarray]
    geometry: dict[str, np.ndarray]
    masked: dict[str, np.ndarray]  # uncropped masked volume, for the no-decoupling path
    global_grid: np.ndarray
    reports: dict[str, str]
    source_boxes: dict[str, tuple] = field(default_factory=dict)


class RegionReportModel(nn.Module):
    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig,
                 texture_dims, geometry_dims):
        super().__init__()
        if enc_cfg.llm_dim != dec_cfg.llm_dim:
            raise ValidationError(
                f"encoder llm_dim {enc_cfg.llm_dim} != decoder llm_dim {dec_cfg.llm_dim}"
            )
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.texture_dims = tuple(texture_dims)
        self.geometry_dims = tuple(geometry_dims)
        self.encoders = FeatureEncoders(enc_cfg, texture_dims, geometry_dims)
        self.decoder = ReportDecoder(dec_cfg)

    @property
    def config_hash(self) -> str:
        return config_hash(self.enc_cfg, self.dec_cfg,
                           {"texture_dims": self.texture_dims, "geometry_dims": self.geometry_dims})

    def local_features(self, feats: SampleFeatures, flags: AblationFlags) -> list[LocalFeature]:
        out = []
        for area in feats.areas:
            if flags.use_lfd:
                texture = self.encoders.texture_feature(feats.texture[area])
                geometry = self.encoders.encode_mask(feats.geometry[area]) if flags.use_geometry else None
            else:
                # no decoupling: one encoding of the uncropped masked volume
                texture = self.encoders.texture_feature(feats.masked[area])
                geometry = None
            out.append(self.encoders.build_local_feature(texture, geometry, area))
        return out

    def assemble(self, feats: SampleFeatures, flags: AblationFlags, tokenizer: Tokenizer,
                 shuffle_rng: np.random.Generator | None = None,
                 instruction: str = DEFAULT_INSTRUCTION,
                 region_labels: str | None = None,
                 assignment: RegionAssignment | None = None):
        """Build (embedding sequence, target ids, loss mask, assignment) for one sample."""
        locals_ = self.local_features(feats, flags)
        if assignment is None:
            if flags.use_rra and shuffle_rng is not None:
                assignment = shuffle_regions(locals_, shuffle_rng)
            else:
                assignment = canonical_assignment(locals_)
        else:
            assignment = RegionAssignment(
                permutation=assignment.permutation,
                slots={s + 1: locals_[assignment.permutation[s]] for s in range(assignment.n)},
            )
        prompt = build_prompt(len(locals_), instruction, include_global=flags.use_global,
                              region_label_template=region_labels)
        global_feature = self.encoders.encode_global(feats.global_grid) if flags.use_global else None
        embedder = TokenEmbedder(tokenizer, self.decoder)
        emb = substitute_embeddings(prompt, global_feature, assignment, embedder)
        target_ids = serialize_target(assignment, feats.reports, tokenizer,
                                      include_prefixes=flags.use_rra)
        loss_mask = [True] * len(target_ids)
        return emb, target_ids, loss_mask, assignment

    @torch.no_grad()
    def generate_report(self, feats: SampleFeatures, flags: AblationFlags, tokenizer: Tokenizer,
                        gcfg: GenerationConfig, instruction: str = DEFAULT_INSTRUCTION,
                        region_labels: str | None = None,
                        assignment: RegionAssignment | None = None):
        """Greedy/top-k decode for one sample; returns (ids, text, report, assignment)."""
        was_training = self.training
        self.eval()
        try:
            emb, _, _, assignment = self.assemble(
                feats, flags, tokenizer, shuffle_rng=None, instruction=instruction,
                region_labels=region_labels, assignment=assignment,
            )
            ids = self.decoder.generate(emb.rows, gcfg)
        finally:
            if was_training:
                self.train()
        text = tokenizer.decode(ids)
        return ids, text, parse_generated(text), assignment


def build_tokenizer(records, instruction: str = DEFAULT_INSTRUCTION) -> Tokenizer:
    """Vocabulary over every text the model can be asked to produce or read."""
    from .areas import AREA_VOCABULARY
    from .prompt import PREFIX_TEMPLATE

    corpus = [instruction]
    for slot in range(1, 11):
        for area in AREA_VOCABULARY:
            corpus.append(PREFIX_TEMPLATE.format(slot=slot, area=area))
    for rec in records:
        corpus.extend(rec.region_reports.values())
    return Tokenizer.build(corpus)


def load_sample_features(features_dir, record) -> SampleFeatures:
    """Read one sample's preprocessed grids from the feature cache."""
    sdir = Path(features_dir) / record.sample_id
    meta = json.loads((sdir / "meta.json").read_text())
    areas = meta["areas"]
    texture, geometry, masked = {}, {}, {}
    for area in areas:
        texture[area] = load_volume(sdir / f"{area}.texture.vol").data
        geometry[area] = load_mask(sdir / f"{area}.geometry.msk", area).data
        masked[area] = load_volume(sdir / f"{area}.masked.vol").data
    return SampleFeatures(
        sample_id=record.sample_id,
        areas=areas,
        texture=texture,
        geometry=geometry,
        masked=masked,
        global_grid=load_volume(sdir / "global.vol").data,
        reports={a: record.region_reports[a] for a in areas},
        source_boxes={a: tuple(meta["source_boxes"][a]) for a in areas},
    )
