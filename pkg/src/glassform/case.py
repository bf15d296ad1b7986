"""Design cases: a glass target plus mold material, schedule and model config."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ValidationError
from .forming import FormingConfig, GlassTarget, default_config
from .geometry import AsphericSurface
from .materials import MoldMaterial, ThermalSchedule, glass_material, mold_material


@dataclass(frozen=True)
class Case:
    name: str
    target: GlassTarget
    mold: MoldMaterial
    schedule: ThermalSchedule
    config: FormingConfig = field(default_factory=default_config)

    @property
    def r_max_mm(self) -> float:
        return self.target.r_max_mm

    def scaled(self, lam: float, name: str | None = None) -> "Case":
        """Geometrically similar case with every length multiplied by lam."""
        if not lam > 0:
            raise ValidationError("scale factor must be positive")
        return replace(self, name=name or f"{self.name}@x{lam:g}", target=self.target.scaled(lam))

    def to_dict(self) -> dict:
        if not isinstance(self.target.surface, AsphericSurface):
            raise ValidationError("only aspheric targets can be written to a case file")
        surf = self.target.surface.to_dict()
        surf.pop("r_max_mm")
        return {
            "name": self.name,
            "surface": surf,
            "r_max_mm": self.target.r_max_mm,
            "thickness_mm": self.target.thickness_mm,
            "glass": self.target.glass.name,
            "mold": self.mold.name,
            "schedule": self.schedule.to_dict(),
            "forming": self.config.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict, base_config: FormingConfig | None = None, catalog: dict | None = None) -> "Case":
        try:
            r_max = float(d["r_max_mm"])
            s = d["surface"]
            surface = AsphericSurface(float(s["c"]), float(s.get("k", 0.0)), tuple(s.get("a", ())), r_max)
            target = GlassTarget(surface, float(d["thickness_mm"]), glass_material(d.get("glass", "GG"), catalog), r_max)
            mold = mold_material(d.get("mold", "glassy_carbon"), catalog)
        except KeyError as exc:
            raise ValidationError(f"case is missing field {exc}") from None
        schedule = ThermalSchedule.from_dict(d["schedule"]) if "schedule" in d else ThermalSchedule()
        config = (base_config or default_config()).with_overrides(d.get("forming"))
        return cls(str(d.get("name", "case")), target, mold, schedule, config)


def load_case(path: str | Path, base_config: FormingConfig | None = None) -> Case:
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from None
    return Case.from_dict(raw, base_config)


def save_case(case: Case, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(case.to_dict(), fh, indent=2)


def reference_case(mold: str = "glassy_carbon") -> Case:
    """Cover-glass demonstration part: 15 mm radius, 0.7 mm thick GG."""
    surface = AsphericSurface(0.04, -2.0, (0.0, 1.1e-5, 3.9e-7, 7.3e-10), 15.0)
    target = GlassTarget(surface, 0.7, glass_material("GG"), 15.0)
    return Case("reference", target, mold_material(mold), ThermalSchedule())
