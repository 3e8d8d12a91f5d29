"""Layout pattern generation: squish encoding, binary discrete diffusion, legalization and DRC."""

from .geometry import Complexity, Layout, LayoutError, SquishPattern, decode_squish, encode_squish, pad_to_square
from .rules import TOY_RULES, DesignRules

__version__ = "0.1.0"

__all__ = [
    "Complexity",
    "DesignRules",
    "Layout",
    "LayoutError",
    "SquishPattern",
    "TOY_RULES",
    "decode_squish",
    "encode_squish",
    "pad_to_square",
]
