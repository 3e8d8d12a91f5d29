"""Design rules shared by the legalizer and the checker."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace


@dataclass(frozen=True)
class DesignRules:
    """Minimum space/width and polygon-area bounds in normalized units.

    Normalized units divide the topology side into ``total_extent`` units;
    ``unit_scale = extent_nm / total_extent`` converts to nanometres.  Leave
    ``total_extent`` unset to take the topology side at use time.
    """

    space_min: float
    width_min: float
    area_min: float
    area_max: float
    extent_nm: int = 2048
    total_extent: float | None = None

    def __post_init__(self):
        if not (self.space_min > 0 and self.width_min > 0):
            raise ValueError("space_min and width_min must be positive")
        if not 0 <= self.area_min < self.area_max:
            raise ValueError("need 0 <= area_min < area_max")
        if self.extent_nm <= 0:
            raise ValueError("extent_nm must be positive")
        if self.total_extent is not None and not self.total_extent > 0:
            raise ValueError("total_extent must be positive")

    def for_side(self, side: int) -> "DesignRules":
        return self if self.total_extent is not None else replace(self, total_extent=float(side))

    @property
    def unit_scale(self) -> float:
        if self.total_extent is None:
            raise ValueError("total_extent unresolved; call for_side() first")
        return self.extent_nm / self.total_extent

    def to_json(self) -> str:
        doc = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(doc, indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignRules":
        allowed = {"space_min", "width_min", "area_min", "area_max", "extent_nm", "total_extent"}
        unknown = set(doc) - allowed
        if unknown:
            raise ValueError(f"unknown design-rule keys: {sorted(unknown)}")
        missing = {"space_min", "width_min", "area_min", "area_max"} - set(doc)
        if missing:
            raise ValueError(f"missing design-rule keys: {sorted(missing)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, text: str) -> "DesignRules":
        return cls.from_dict(json.loads(text))


# Baseline for the bundled toy library: 16x16 topologies over 2048 nm (128 nm per unit),
# so the 96 nm minimum feature and gap of the toy generator sit exactly on the bounds.
TOY_RULES = DesignRules(space_min=0.75, width_min=0.75, area_min=0.5, area_max=40.0, extent_nm=2048)
