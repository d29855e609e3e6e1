"""Prompt assembly and grounded report structure.

A prompt is an ordered list of segments: instruction text, one ``<image>``
placeholder for the global feature, and one ``<region i>`` placeholder per
referred region. Placeholders are replaced by feature rows to form the
embedding sequence fed to the decoder. Training targets prepend the prefix
"The region [i] is {area}." to each region body so generated text can be
parsed back into grounded sections.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np
import torch

from .areas import AREA_INDEX
from .encoders import LocalFeature
from .errors import ValidationError

DEFAULT_INSTRUCTION = "Please describe the findings in the image and each referred region."
UNKNOWN_AREA = "UNKNOWN"

PREFIX_TEMPLATE = "The region [{slot}] is {area}."
PREFIX_RE = re.compile(r"The region \[(\d+)\] is ([A-Za-z]+(?:-[A-Za-z]+)*)\.", re.IGNORECASE)

# Optional text anchor inserted before each region's feature rows. Naming the
# slot next to its rows gives the decoder a direct handle for grounding.
DEFAULT_REGION_LABEL = "\nThe region [{slot}] is "


@dataclass(frozen=True)
class Segment:
    kind: str  # "text" | "global" | "region"
    text: str = ""
    slot: int = 0


@dataclass
class PromptSpec:
    segments: list[Segment]
    instruction: str

    def __post_init__(self):
        kinds = [s.kind for s in self.segments]
        if "text" not in kinds:
            raise ValidationError("prompt needs at least one text segment")
        n_global = kinds.count("global")
        if n_global > 1:
            raise ValidationError(f"prompt must contain at most one global placeholder, got {n_global}")
        slots = [s.slot for s in self.segments if s.kind == "region"]
        if not slots:
            raise ValidationError("prompt needs at least one region placeholder")
        if sorted(slots) != list(range(1, len(slots) + 1)):
            raise ValidationError(f"region slots must be numbered 1..n contiguously, got {slots}")

    @property
    def n_regions(self) -> int:
        return sum(1 for s in self.segments if s.kind == "region")

    @property
    def has_global(self) -> bool:
        return any(s.kind == "global" for s in self.segments)


@dataclass
class RegionAssignment:
    """Bijection slot -> region feature, recorded for target construction."""

    permutation: tuple[int, ...]  # slot i holds input region permutation[i-1]
    slots: dict[int, LocalFeature]

    def __post_init__(self):
        n = len(self.permutation)
        if sorted(self.permutation) != list(range(n)):
            raise ValidationError(f"permutation {self.permutation} is not a bijection on 0..{n-1}")
        if sorted(self.slots) != list(range(1, n + 1)):
            raise ValidationError(f"slots must be 1..{n}, got {sorted(self.slots)}")

    @property
    def n(self) -> int:
        return len(self.permutation)

    def area_of(self, slot: int) -> str:
        return self.slots[slot].area_name


def build_prompt(n_regions: int, instruction: str = DEFAULT_INSTRUCTION,
                 include_global: bool = True,
                 region_label_template: str | None = None) -> PromptSpec:
    """Instruction text, then the global placeholder, then region slots 1..n.

    With a region_label_template, each region's rows are preceded by a text
    segment naming the slot (e.g. "The region [2] is ").
    """
    if not 1 <= n_regions <= 10:
        raise ValidationError(f"n_regions must be in 1..10, got {n_regions}")
    segments = [Segment(kind="text", text=instruction)]
    if include_global:
        segments.append(Segment(kind="global"))
    for i in range(1, n_regions + 1):
        if region_label_template:
            segments.append(Segment(kind="text", text=region_label_template.format(slot=i)))
        segments.append(Segment(kind="region", slot=i))
    return PromptSpec(segments=segments, instruction=instruction)


def shuffle_regions(local_features: list[LocalFeature], rng: np.random.Generator) -> RegionAssignment:
    """Uniform random slot order; feature content is untouched."""
    if not local_features:
        raise ValidationError("cannot shuffle an empty feature list")
    perm = tuple(int(i) for i in rng.permutation(len(local_features)))
    slots = {i + 1: local_features[perm[i]] for i in range(len(perm))}
    return RegionAssignment(permutation=perm, slots=slots)


def canonical_assignment(local_features: list[LocalFeature]) -> RegionAssignment:
    perm = tuple(range(len(local_features)))
    return RegionAssignment(permutation=perm, slots={i + 1: f for i, f in enumerate(local_features)})


@dataclass
class EmbeddingSequence:
    """Substituted prompt: embedding rows plus the layout of each segment."""

    rows: torch.Tensor  # (S, llm_dim)
    layout: list[tuple[str, int, int, int]] = field(default_factory=list)  # (kind, slot, start, stop)

    @property
    def n_rows(self) -> int:
        return int(self.rows.shape[0])

    def rows_of(self, kind: str, slot: int = 0) -> torch.Tensor:
        for k, s, start, stop in self.layout:
            if k == kind and s == slot:
                return self.rows[start:stop]
        raise KeyError(f"no segment ({kind}, {slot}) in layout")


class TokenEmbedder:
    """Couples the tokenizer with the decoder's token embedding table."""

    def __init__(self, tokenizer, decoder):
        self.tokenizer = tokenizer
        self.decoder = decoder

    def embed_text(self, text: str) -> torch.Tensor:
        ids = self.tokenizer.encode(text)
        return self.decoder.embed_tokens(ids)


def substitute_embeddings(prompt: PromptSpec, global_feature, assignment: RegionAssignment,
                          token_embedder: TokenEmbedder) -> EmbeddingSequence:
    """Replace text spans by token embeddings and placeholders by feature rows."""
    if prompt.n_regions != assignment.n:
        raise ValidationError(
            f"prompt has {prompt.n_regions} region slots but assignment has {assignment.n}"
        )
    if prompt.has_global and global_feature is None:
        raise ValidationError("prompt contains a global placeholder but no global feature given")
    pieces: list[torch.Tensor] = []
    layout: list[tuple[str, int, int, int]] = []
    offset = 0
    width = None
    for seg in prompt.segments:
        if seg.kind == "text":
            rows = token_embedder.embed_text(seg.text)
        elif seg.kind == "global":
            rows = global_feature
        else:
            rows = assignment.slots[seg.slot].embeddings
        if width is None:
            width = rows.shape[-1]
        elif rows.shape[-1] != width:
            raise ValidationError(f"row width mismatch: {rows.shape[-1]} vs {width}")
        pieces.append(rows)
        layout.append((seg.kind, seg.slot, offset, offset + rows.shape[0]))
        offset += rows.shape[0]
    return EmbeddingSequence(rows=torch.cat(pieces, dim=0), layout=layout)


def target_text(assignment: RegionAssignment, region_reports: dict[str, str],
                include_prefixes: bool = True) -> str:
    """Concatenated per-slot sections, each terminated by a newline separator."""
    parts = []
    for slot in range(1, assignment.n + 1):
        area = assignment.area_of(slot)
        if area not in region_reports:
            raise ValidationError(f"no report body for area {area!r}")
        body = region_reports[area]
        if include_prefixes:
            parts.append(f"{PREFIX_TEMPLATE.format(slot=slot, area=area)} {body}\n")
        else:
            parts.append(f"{body}\n")
    return "".join(parts)


def serialize_target(assignment: RegionAssignment, region_reports: dict[str, str],
                     tokenizer, include_prefixes: bool = True) -> list[int]:
    """Token ids of the full autoregressive target, EOS-terminated."""
    from .tokenizer import EOS_ID

    ids = tokenizer.encode(target_text(assignment, region_reports, include_prefixes))
    return ids + [EOS_ID]


@dataclass
class ReportSection:
    slot: int
    predicted_area: str
    body: str
    valid_area: bool


@dataclass
class StructuredReport:
    sections: list[ReportSection]
    raw_text: str

    @property
    def evaluation_text(self) -> str:
        """Prefix-stripped bodies, ready for text metrics."""
        return "\n".join(s.body for s in self.sections if s.body)


def parse_generated(text: str) -> StructuredReport:
    """Split decoder output on the grounding prefix pattern; total on any input."""
    matches = list(PREFIX_RE.finditer(text))
    sections: list[ReportSection] = []
    if not matches:
        return StructuredReport(
            sections=[ReportSection(slot=0, predicted_area=UNKNOWN_AREA,
                                    body=text.strip(), valid_area=False)],
            raw_text=text,
        )
    lead = text[: matches[0].start()].strip()
    if lead:
        sections.append(ReportSection(slot=0, predicted_area=UNKNOWN_AREA, body=lead, valid_area=False))
    for i, m in enumerate(matches):
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[m.end() : end].strip()
        area = m.group(2).lower()
        valid = area in AREA_INDEX
        sections.append(
            ReportSection(slot=int(m.group(1)), predicted_area=area if valid else m.group(2),
                          body=body, valid_area=valid)
        )
    return StructuredReport(sections=sections, raw_text=text)
