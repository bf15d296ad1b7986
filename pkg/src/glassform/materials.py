"""
Glass and mold material constants and viscoelastic relaxation under
time-temperature superposition.

Relaxation is described by a Prony series evaluated at the reduced time of a
piecewise-linear thermal schedule, with a WLF shift function.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import DomainError, MaterialLookupError, ValidationError

# temperatures within this margin above the WLF singularity are treated as frozen
WLF_GUARD_MARGIN_C = 5.0
DEFAULT_STEP_S = 1.0


@dataclass(frozen=True)
class PronyTerm:
    g: float
    k: float
    tau_s: float


@dataclass(frozen=True)
class PronySeries:
    terms: tuple[PronyTerm, ...]
    reference_temperature_c: float

    def __post_init__(self):
        object.__setattr__(self, "terms", tuple(self.terms))
        if not self.terms:
            raise ValidationError("Prony series needs at least one term")
        for term in self.terms:
            if not 0.0 < term.g <= 1.0:
                raise ValidationError(f"Prony g_i must lie in (0, 1], got {term.g}")
            if term.tau_s <= 0.0:
                raise ValidationError(f"Prony tau_i must be positive, got {term.tau_s}")
            if term.k != 0.0:
                raise ValidationError("bulk relaxation (k_i) is not supported; k_i must be 0")
        if self.g_sum > 1.0 + 1e-12:
            raise ValidationError(f"sum of Prony g_i exceeds 1 ({self.g_sum})")

    @property
    def g_sum(self) -> float:
        return sum(t.g for t in self.terms)


@dataclass(frozen=True)
class WlfParams:
    c1: float
    c2: float
    reference_temperature_c: float

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise ValidationError(f"WLF constants must be positive (c1={self.c1}, c2={self.c2})")

    @property
    def singular_temperature_c(self) -> float:
        return self.reference_temperature_c - self.c2


@dataclass(frozen=True)
class MaterialProperties:
    name: str
    density_g_cm3: float
    youngs_modulus_gpa: float
    poisson_ratio: float
    cte_below_tg_per_c: float
    cte_above_tg_per_c: float
    tg_c: float
    prony: PronySeries
    wlf: WlfParams

    def __post_init__(self):
        if self.cte_below_tg_per_c <= 0 or self.cte_above_tg_per_c <= 0:
            raise ValidationError(f"{self.name}: CTEs must be positive")
        if self.cte_above_tg_per_c < self.cte_below_tg_per_c:
            raise ValidationError(f"{self.name}: CTE above Tg must not be below the glassy CTE")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = "glass"
        return d


@dataclass(frozen=True)
class MoldMaterial:
    name: str
    cte_per_c: float

    def __post_init__(self):
        if self.cte_per_c <= 0:
            raise ValidationError(f"{self.name}: mold CTE must be positive")

    def to_dict(self) -> dict:
        return {"kind": "mold", "name": self.name, "cte_per_c": self.cte_per_c}


@dataclass(frozen=True)
class ThermalSchedule:
    """Hold at the molding temperature, linear anneal, then linear cooling."""

    molding_temperature_c: float = 700.0
    hold_seconds: float = 60.0
    annealing_rate_c_per_s: float = 1.0
    anneal_end_c: float = 500.0
    cooling_rate_c_per_s: float = 5.0
    room_temperature_c: float = 20.0

    def __post_init__(self):
        if not self.molding_temperature_c > self.anneal_end_c > self.room_temperature_c:
            raise ValidationError(
                "schedule temperatures must satisfy molding > anneal_end > room "
                f"({self.molding_temperature_c}, {self.anneal_end_c}, {self.room_temperature_c})"
            )
        if self.annealing_rate_c_per_s <= 0 or self.cooling_rate_c_per_s <= 0:
            raise ValidationError("annealing and cooling rates must be positive")
        if self.hold_seconds < 0:
            raise ValidationError("hold time must be non-negative")

    @property
    def delta_t(self) -> float:
        return self.molding_temperature_c - self.room_temperature_c

    def segments(self) -> list[tuple[float, float, float]]:
        """(start °C, end °C, duration s) for the hold, anneal and cool legs."""
        anneal = (self.molding_temperature_c - self.anneal_end_c) / self.annealing_rate_c_per_s
        cool = (self.anneal_end_c - self.room_temperature_c) / self.cooling_rate_c_per_s
        return [
            (self.molding_temperature_c, self.molding_temperature_c, self.hold_seconds),
            (self.molding_temperature_c, self.anneal_end_c, anneal),
            (self.anneal_end_c, self.room_temperature_c, cool),
        ]

    def to_dict(self) -> dict:
        return {
            "t_mold_c": self.molding_temperature_c,
            "hold_s": self.hold_seconds,
            "anneal_rate_c_per_s": self.annealing_rate_c_per_s,
            "anneal_end_c": self.anneal_end_c,
            "cool_rate_c_per_s": self.cooling_rate_c_per_s,
            "room_c": self.room_temperature_c,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ThermalSchedule":
        base = cls()
        return cls(
            molding_temperature_c=float(d.get("t_mold_c", base.molding_temperature_c)),
            hold_seconds=float(d.get("hold_s", base.hold_seconds)),
            annealing_rate_c_per_s=float(d.get("anneal_rate_c_per_s", base.annealing_rate_c_per_s)),
            anneal_end_c=float(d.get("anneal_end_c", base.anneal_end_c)),
            cooling_rate_c_per_s=float(d.get("cool_rate_c_per_s", base.cooling_rate_c_per_s)),
            room_temperature_c=float(d.get("room_c", base.room_temperature_c)),
        )


def prony_g(t, series: PronySeries):
    """
    Normalized relaxation modulus g(t) = 1 - sum g_i (1 - exp(-t / tau_i)).

    Accepts a scalar or an array of non-negative times (seconds).
    """
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0) or np.any(np.isnan(t_arr)):
        raise DomainError(f"relaxation time must be non-negative, got {t}")
    out = np.ones_like(t_arr)
    for term in series.terms:
        out = out - term.g * -np.expm1(-t_arr / term.tau_s)
    return float(out) if out.ndim == 0 else out


def wlf_log10_shift(temperature_c, params: WlfParams, margin_c: float = WLF_GUARD_MARGIN_C):
    temp = np.asarray(temperature_c, dtype=float)
    limit = params.singular_temperature_c + margin_c
    if np.any(temp <= limit):
        raise DomainError(
            f"temperature {np.min(temp):g} °C is at or below the WLF guard {limit:g} °C "
            f"(singularity at {params.singular_temperature_c:g} °C)"
        )
    dt = temp - params.reference_temperature_c
    out = -params.c1 * dt / (params.c2 + dt)
    return float(out) if out.ndim == 0 else out


def wlf_shift(temperature_c, params: WlfParams, margin_c: float = WLF_GUARD_MARGIN_C):
    """Linear-scale WLF shift factor A(T); A(T0) == 1 exactly."""
    return 10.0 ** wlf_log10_shift(temperature_c, params, margin_c)


def _inverse_shift(temps: np.ndarray, params: WlfParams, margin_c: float) -> np.ndarray:
    # 1/A, zero (frozen) at and below the guard temperature
    limit = params.singular_temperature_c + margin_c
    live = temps > limit
    out = np.zeros_like(temps)
    dt = temps[live] - params.reference_temperature_c
    out[live] = 10.0 ** (params.c1 * dt / (params.c2 + dt))
    return out


def segment_reduced_time(
    start_c: float,
    end_c: float,
    duration_s: float,
    params: WlfParams,
    step_seconds: float = DEFAULT_STEP_S,
    margin_c: float = WLF_GUARD_MARGIN_C,
) -> float:
    """Reduced time of one linear temperature ramp, midpoint sub-stepping."""
    if step_seconds <= 0:
        raise ValidationError("step_seconds must be positive")
    if duration_s <= 0:
        return 0.0
    n = max(1, math.ceil(duration_s / step_seconds - 1e-9))
    dt = duration_s / n
    frac = (np.arange(n) + 0.5) / n
    temps = start_c + (end_c - start_c) * frac
    return float(np.sum(_inverse_shift(temps, params, margin_c)) * dt)


def reduced_time(
    schedule: ThermalSchedule,
    params: WlfParams,
    step_seconds: float = DEFAULT_STEP_S,
    margin_c: float = WLF_GUARD_MARGIN_C,
) -> float:
    """Reduced time accumulated over the whole thermal schedule (seconds)."""
    return sum(
        segment_reduced_time(a, b, d, params, step_seconds, margin_c)
        for a, b, d in schedule.segments()
    )


def residual_fraction(
    schedule: ThermalSchedule,
    prony: PronySeries,
    wlf: WlfParams,
    step_seconds: float = DEFAULT_STEP_S,
) -> float:
    """Fraction of forming stress left unrelaxed at the end of the schedule."""
    return prony_g(reduced_time(schedule, wlf, step_seconds), prony)


def mold_scale_factor(glass: MaterialProperties, mold: MoldMaterial, schedule: ThermalSchedule) -> float:
    """
    Mold-to-glass dimension ratio m = (1 + a_glass dT) / (1 + a_mold dT).

    The glass CTE is the span-weighted average of its two regimes split at Tg.
    """
    dT = schedule.molding_temperature_c - schedule.room_temperature_c
    if dT <= 0:
        raise DomainError("molding temperature must exceed room temperature")
    alpha = effective_glass_cte(glass, schedule)
    return (1.0 + alpha * dT) / (1.0 + mold.cte_per_c * dT)


def effective_glass_cte(glass: MaterialProperties, schedule: ThermalSchedule) -> float:
    t_hi = schedule.molding_temperature_c
    t_lo = schedule.room_temperature_c
    dT = t_hi - t_lo
    tg = min(max(glass.tg_c, t_lo), t_hi)
    return (glass.cte_above_tg_per_c * (t_hi - tg) + glass.cte_below_tg_per_c * (tg - t_lo)) / dT


def _glass(name, E, nu, a_lo, a_hi, g, tau, c1, c2, t0) -> MaterialProperties:
    return MaterialProperties(
        name=name,
        density_g_cm3=2.5,
        youngs_modulus_gpa=E,
        poisson_ratio=nu,
        cte_below_tg_per_c=a_lo,
        cte_above_tg_per_c=a_hi,
        tg_c=t0,
        prony=PronySeries((PronyTerm(g, 0.0, tau),), t0),
        wlf=WlfParams(c1, c2, t0),
    )


BUILTIN: dict[str, MaterialProperties | MoldMaterial] = {
    "GG": _glass("GG", 76.7, 0.275, 8.1e-6, 12e-6, 0.999, 37.143, 36.84842, 1204.485, 570.0),
    "BK7": _glass("BK7", 82.0, 0.206, 8.3e-6, 18.6e-6, 0.999, 0.00012, 5.01, 179.4, 685.0),
    "graphite": MoldMaterial("graphite", 4.5e-6),
    "glassy_carbon": MoldMaterial("glassy_carbon", 2.5e-6),
}


def _entry_from_dict(name: str, d: dict) -> MaterialProperties | MoldMaterial:
    if "cte_per_c" in d and "prony" not in d:
        return MoldMaterial(name=d.get("name", name), cte_per_c=float(d["cte_per_c"]))
    prony = d["prony"]
    wlf = d["wlf"]
    return MaterialProperties(
        name=d.get("name", name),
        density_g_cm3=float(d["density_g_cm3"]),
        youngs_modulus_gpa=float(d["youngs_modulus_gpa"]),
        poisson_ratio=float(d["poisson_ratio"]),
        cte_below_tg_per_c=float(d["cte_below_tg_per_c"]),
        cte_above_tg_per_c=float(d["cte_above_tg_per_c"]),
        tg_c=float(d.get("tg_c", wlf["reference_temperature_c"])),
        prony=PronySeries(
            tuple(PronyTerm(float(t["g"]), float(t.get("k", 0.0)), float(t["tau_s"])) for t in prony["terms"]),
            float(prony["reference_temperature_c"]),
        ),
        wlf=WlfParams(float(wlf["c1"]), float(wlf["c2"]), float(wlf["reference_temperature_c"])),
    )


def load_catalog(path: str | Path | None = None) -> dict[str, MaterialProperties | MoldMaterial]:
    """Built-in entries, overlaid by the entries of a JSON catalog file if given.

    The file maps names to objects whose keys mirror the dataclass fields.
    """
    catalog = dict(BUILTIN)
    if path is not None:
        with open(path) as fh:
            raw = json.load(fh)
        for name, entry in raw.items():
            catalog[name] = _entry_from_dict(name, entry)
    return catalog


def material_catalog(name: str, catalog: dict | None = None) -> MaterialProperties | MoldMaterial:
    cat = BUILTIN if catalog is None else catalog
    try:
        return cat[name]
    except KeyError:
        raise MaterialLookupError(
            f"unknown material {name!r}; available: {', '.join(sorted(cat))}"
        ) from None


def glass_material(name: str, catalog: dict | None = None) -> MaterialProperties:
    m = material_catalog(name, catalog)
    if not isinstance(m, MaterialProperties):
        raise MaterialLookupError(f"{name!r} is a mold material, not a glass")
    return m


def mold_material(name: str, catalog: dict | None = None) -> MoldMaterial:
    m = material_catalog(name, catalog)
    if not isinstance(m, MoldMaterial):
        raise MaterialLookupError(f"{name!r} is a glass, not a mold material")
    return m
