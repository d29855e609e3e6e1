"""Canonical anatomical area vocabulary and the default abnormality label set."""

# The 10 referrable chest areas, in canonical order. Area names are rendered
# lowercase and hyphenated so each one tokenizes as a single word.
AREA_VOCABULARY = (
    "abdomen",
    "bones",
    "breasts",
    "esophagus",
    "heart",
    "lungs",
    "trachea-and-bronchi",
    "mediastinum",
    "pleura",
    "thyroid",
)

AREA_INDEX = {name: i for i, name in enumerate(AREA_VOCABULARY)}

# Default 18-entry abnormality vocabulary. The label count is fixed by the
# evaluation contract; the entries themselves are configurable stand-ins.
DEFAULT_ABNORMALITIES = (
    "nodule",
    "mass",
    "opacity",
    "consolidation",
    "atelectasis",
    "effusion",
    "pneumothorax",
    "edema",
    "emphysema",
    "fibrosis",
    "bronchiectasis",
    "cardiomegaly",
    "calcification",
    "thickening",
    "infiltration",
    "fracture",
    "hernia",
    "lesion",
)


def check_area(name: str) -> str:
    from .errors import ValidationError

    if name not in AREA_INDEX:
        raise ValidationError(f"unknown area name: {name!r}")
    return name
