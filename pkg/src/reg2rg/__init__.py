"""Region-guided referring-and-grounding report generation for volumetric scans."""

__version__ = "0.1.0"

from .areas import AREA_VOCABULARY, DEFAULT_ABNORMALITIES
from .volume_io import LabelVector, RegionMask, RegionSet, Volume

__all__ = [
    "AREA_VOCABULARY",
    "DEFAULT_ABNORMALITIES",
    "LabelVector",
    "RegionMask",
    "RegionSet",
    "Volume",
    "__version__",
]
