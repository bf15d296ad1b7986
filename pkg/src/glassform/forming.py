"""
Reduced-order forward model of glass thermoforming.

The glass conforms to the (thermally expanded) mold cavity at the molding
temperature, thins slightly on inclined regions, springs back according to the
unrelaxed stress fraction left by the thermal schedule, and finally shrinks to
room temperature. Deviations from the design are reported in micrometres.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, replace
from importlib import resources

import numpy as np

from .errors import GeometryError, RangeError, ValidationError
from .geometry import (
    AsphericSurface,
    Profile,
    fd_derivatives,
    monotone_interpolator,
    offset_points,
    _check_offset,
    _sag,
)
from .materials import (
    MaterialProperties,
    MoldMaterial,
    ThermalSchedule,
    effective_glass_cte,
    mold_scale_factor,
    residual_fraction,
)

THICKNESS_RATIO_WARN = 0.2
# mold overhang beyond the glass edge, in glass thicknesses
OVERHANG_THICKNESSES = 1.5


@dataclass(frozen=True)
class FormingConfig:
    springback_beta: float
    springback_gamma: float
    thinning_eta: float
    grid_points: int = 201
    reduced_time_step_s: float = 1.0

    def __post_init__(self):
        for name in ("springback_beta", "springback_gamma", "thinning_eta"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.grid_points < 16:
            raise ValidationError("grid_points must be at least 16")
        if self.reduced_time_step_s <= 0:
            raise ValidationError("reduced_time_step_s must be positive")

    def with_overrides(self, overrides: dict | None) -> "FormingConfig":
        if not overrides:
            return self
        unknown = set(overrides) - set(asdict(self))
        if unknown:
            raise ValidationError(f"unknown forming config keys: {sorted(unknown)}")
        kw = {k: (int(v) if k == "grid_points" else float(v)) for k, v in overrides.items()}
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


def default_config() -> FormingConfig:
    """Frozen calibration of the reduced-order model."""
    raw = json.loads(resources.files("glassform.data").joinpath("forming_defaults.json").read_text())
    return FormingConfig(**{k: v for k, v in raw.items() if not k.startswith("_")})


IDENTITY_CONFIG = FormingConfig(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class GlassTarget:
    """Design of a uniform-thickness revolved glass part.

    ``surface`` describes the inner (upper-mold side) surface; the outer
    surface is its normal offset by the thickness.
    """

    surface: AsphericSurface | Profile
    thickness_mm: float
    glass: MaterialProperties
    r_max_mm: float

    def __post_init__(self):
        if self.thickness_mm <= 0:
            raise ValidationError("thickness must be positive")
        if self.r_max_mm <= 0:
            raise ValidationError("r_max must be positive")
        if self.r_max_mm > self.surface.r_max_mm * (1 + 1e-12):
            raise ValidationError(
                f"r_max {self.r_max_mm} exceeds the surface extent {self.surface.r_max_mm}"
            )
        if self.thickness_mm > THICKNESS_RATIO_WARN * self.r_max_mm:
            warnings.warn(
                f"thickness/r_max = {self.thickness_mm / self.r_max_mm:.3f} exceeds "
                f"{THICKNESS_RATIO_WARN}; the thin-shell assumptions degrade",
                stacklevel=2,
            )

    def scaled(self, lam: float) -> "GlassTarget":
        return GlassTarget(self.surface.scaled(lam), self.thickness_mm * lam, self.glass, self.r_max_mm * lam)

    def grid(self, n: int) -> np.ndarray:
        return np.linspace(0.0, self.r_max_mm, n)


@dataclass(frozen=True)
class MoldPair:
    """Upper and lower mold generatrices at room temperature on a shared grid.

    The first ``glass_points`` nodes are ``scale_m`` times the target grid;
    the remaining nodes are an overhang past the glass edge.
    """

    upper: Profile
    lower: Profile
    scale_m: float
    mold_material: MoldMaterial
    glass_points: int

    def __post_init__(self):
        if not np.array_equal(self.upper.xs, self.lower.xs):
            raise ValidationError("upper and lower molds must share one x grid")
        if np.any(self.upper.ys <= self.lower.ys):
            raise GeometryError("mold cavity gap must be positive everywhere")
        if not 16 <= self.glass_points <= len(self.upper.xs):
            raise ValidationError("glass_points out of range")

    @property
    def xs(self) -> np.ndarray:
        return self.upper.xs

    def with_heights(self, upper_ys, lower_ys) -> "MoldPair":
        return replace(self, upper=Profile(self.xs, upper_ys), lower=Profile(self.xs, lower_ys))


@dataclass(frozen=True, eq=False)
class FormedGlass:
    inner: Profile
    outer: Profile
    thickness_mm_at: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.thickness_mm_at) <= 0):
            raise GeometryError("formed thickness must be positive")


@dataclass(frozen=True, eq=False)
class DeviationReport:
    xs: np.ndarray
    inner_dev_um: np.ndarray
    outer_dev_um: np.ndarray
    thickness_dev_um: np.ndarray

    @property
    def max_inner_um(self) -> float:
        return float(np.max(np.abs(self.inner_dev_um)))

    @property
    def max_outer_um(self) -> float:
        return float(np.max(np.abs(self.outer_dev_um)))

    @property
    def max_thickness_um(self) -> float:
        return float(np.max(np.abs(self.thickness_dev_um)))

    @property
    def max_surface_um(self) -> float:
        return max(self.max_inner_um, self.max_outer_um)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("x_mm,dev_inner_um,dev_outer_um,dev_thickness_um\n")
            for row in zip(self.xs, self.inner_dev_um, self.outer_dev_um, self.thickness_dev_um):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def _inner_heights(target: GlassTarget, xs: np.ndarray):
    """Inner-surface height, slope and second derivative on ``xs``.

    Past r_max the surface continues as its second-order Taylor polynomial, which
    only shapes the mold overhang.
    """
    R = target.r_max_mm
    inside = xs <= R
    y = np.empty_like(xs)
    dy = np.empty_like(xs)
    d2 = np.empty_like(xs)
    if isinstance(target.surface, AsphericSurface):
        y[inside], dy[inside], d2[inside] = _sag(target.surface, xs[inside])
        yR, dyR, d2R = _sag(target.surface, np.array([R]))
    else:
        prof = target.surface
        f = monotone_interpolator(prof.xs, prof.ys)
        g1, g2 = fd_derivatives(prof.xs, prof.ys)
        y[inside] = f(xs[inside])
        dy[inside] = f(xs[inside], 1)
        d2[inside] = np.interp(xs[inside], prof.xs, g2)
        yR, dyR, d2R = f(np.array([R])), f(np.array([R]), 1), np.interp([R], prof.xs, g2)
    u = xs[~inside] - R
    y[~inside] = yR + dyR * u + 0.5 * d2R * u * u
    dy[~inside] = dyR + d2R * u
    d2[~inside] = d2R
    dy[xs == 0.0] = 0.0
    return y, dy, d2


def _extended_grid(target: GlassTarget, n: int) -> np.ndarray:
    xt = target.grid(n)
    h = target.r_max_mm / (n - 1)
    n_ext = math.ceil(OVERHANG_THICKNESSES * target.thickness_mm / h) + 2
    return np.concatenate((xt, target.r_max_mm + h * np.arange(1, n_ext + 1)))


def _design_surfaces(target: GlassTarget, xs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    y, dy, d2 = _inner_heights(target, xs)
    kappa = d2 / (1.0 + dy * dy) ** 1.5
    ox, oy = offset_points(xs, y, dy, -target.thickness_mm)
    _check_offset(xs, kappa, -target.thickness_mm, ox)
    ox[0] = 0.0
    if ox[-1] < xs[-1]:
        raise GeometryError("outer surface does not cover the design grid")
    return y, monotone_interpolator(ox, oy)(xs)


def target_surfaces(target: GlassTarget, n: int = 201) -> tuple[Profile, Profile]:
    """Design inner and outer glass surfaces on the n-point grid [0, r_max]."""
    xe = _extended_grid(target, n)
    inner, outer = _design_surfaces(target, xe)
    return Profile(xe[:n], inner[:n]), Profile(xe[:n], outer[:n])


def design_initial_molds(
    target: GlassTarget,
    mold_material: MoldMaterial,
    schedule: ThermalSchedule,
    config: FormingConfig,
) -> MoldPair:
    """Molds copied from the design surfaces, scaled by m in both coordinates."""
    m = mold_scale_factor(target.glass, mold_material, schedule)
    n = config.grid_points
    xe = _extended_grid(target, n)
    inner, outer = _design_surfaces(target, xe)
    return MoldPair(
        upper=Profile(m * xe, m * inner),
        lower=Profile(m * xe, m * outer),
        scale_m=m,
        mold_material=mold_material,
        glass_points=n,
    )


def blank_thickness(target: GlassTarget, panels: int = 4000) -> tuple[float, bool]:
    """Thickness of the flat blank of radius r_max holding the product volume.

    The shell volume is integrated over the midsurface as the integral of
    2 pi x t ds. Returns (t0, within_limit) where ``within_limit`` is False when
    t0 exceeds the 10 % allowance over the product thickness.
    """
    from scipy.integrate import simpson

    t = target.thickness_mm
    u = np.linspace(0.0, target.r_max_mm, 2 * panels + 1)
    y, dy, d2 = _inner_heights(target, u)
    theta = np.arctan(dy)
    kappa = d2 / (1.0 + dy * dy) ** 1.5
    xm = u + 0.5 * t * np.sin(theta)
    # |d(mid)/du| = sqrt(1 + y'^2) (1 + kappa t / 2) for the offset toward -y
    ds = np.sqrt(1.0 + dy * dy) * (1.0 + 0.5 * t * kappa)
    volume = simpson(2.0 * np.pi * xm * t * ds, x=u)
    t0 = volume / (np.pi * target.r_max_mm**2)
    return float(t0), bool(t0 <= 1.1 * t)


def _normal_gap(ux, uy, slope, lower: np.ndarray, lx: np.ndarray):
    """Distance along each upper-mold normal to the lower mold."""
    lf = monotone_interpolator(lx, lower)
    dlf = lf.derivative()
    th = np.arctan(slope)
    sn, cs = np.sin(th), np.cos(th)
    s = (uy - lf(ux)) * cs
    for _ in range(30):
        xq = ux + s * sn
        f = lf(xq) - uy + s * cs
        fp = dlf(xq) * sn + cs
        step = f / fp
        s = s - step
        if np.max(np.abs(step)) < 1e-14 * max(1.0, lx[-1]):
            break
    reach = ux + s * sn
    n_ok = int(np.argmax(reach > lx[-1])) if np.any(reach > lx[-1]) else len(ux)
    return s[:n_ok], sn[:n_ok], cs[:n_ok]


def simulate_forming(
    molds: MoldPair,
    target: GlassTarget,
    schedule: ThermalSchedule,
    config: FormingConfig,
) -> FormedGlass:
    """Run the forward model and return the room-temperature glass on the target grid."""
    glass = target.glass
    dT = schedule.delta_t
    n = molds.glass_points

    # conform: glass fills the cavity of the molds expanded to the molding temperature
    e_mold = 1.0 + molds.mold_material.cte_per_c * dT
    ux, uy = molds.xs * e_mold, molds.upper.ys * e_mold
    ly = molds.lower.ys * e_mold
    du, _ = fd_derivatives(ux, uy)
    du[0] = 0.0
    s, sn, cs = _normal_gap(ux, uy, du, ly, ux)
    if len(s) < 16 or np.any(s <= 0):
        raise GeometryError("mold cavity collapsed: non-positive normal gap")
    k = len(s)
    mx = ux[:k] + 0.5 * s * sn
    my = uy[:k] - 0.5 * s * cs
    if np.any(np.diff(mx) <= 0):
        raise GeometryError("hot midsurface folds over (x not increasing)")

    dym, d2m = fd_derivatives(mx, my)
    dym[0] = 0.0
    sin2 = dym * dym / (1.0 + dym * dym)
    kappa_m = d2m / (1.0 + dym * dym) ** 1.5

    # thinning on inclined regions
    t_formed = s * (1.0 - config.thinning_eta * sin2)

    # springback from the unrelaxed stress fraction
    r = residual_fraction(schedule, glass.prony, glass.wlf, config.reduced_time_step_s)
    y_sb = (1.0 - config.springback_beta * r) * my - config.springback_gamma * r * t_formed**2 * (
        kappa_m - kappa_m[0]
    )

    # free thermal shrinkage to room temperature
    shrink = 1.0 / (1.0 + effective_glass_cte(glass, schedule) * dT)
    X, Y, T = mx * shrink, y_sb * shrink, t_formed * shrink

    dY, _ = fd_derivatives(X, Y)
    dY[0] = 0.0
    th = np.arctan(dY)
    half = 0.5 * T
    xi, yi = X - half * np.sin(th), Y + half * np.cos(th)
    xo, yo = X + half * np.sin(th), Y - half * np.cos(th)
    if np.any(np.diff(xi) <= 0) or np.any(np.diff(xo) <= 0):
        raise GeometryError("formed glass surface self-intersects")
    xt = target.grid(n)
    R = target.r_max_mm
    if xi[-1] < R or xo[-1] < R:
        raise RangeError("formed glass does not cover the target radius; increase the mold overhang")
    inner = monotone_interpolator(xi, yi)(xt)
    outer = monotone_interpolator(xo, yo)(xt)
    thick = monotone_interpolator(xi, T)(xt)
    return FormedGlass(Profile(xt, inner), Profile(xt, outer), thick)


def compute_deviations(formed: FormedGlass, target: GlassTarget) -> DeviationReport:
    """Design minus formed surface heights (and formed minus design thickness), in μm."""
    xs = formed.inner.xs
    n = len(xs)
    if not (np.array_equal(xs, formed.outer.xs) and np.allclose(xs, target.grid(n), rtol=0, atol=1e-12 * target.r_max_mm)):
        raise RangeError("formed glass is not sampled on the target grid")
    inner_t, outer_t = target_surfaces(target, n)
    return DeviationReport(
        xs=xs,
        inner_dev_um=(inner_t.ys - formed.inner.ys) * 1e3,
        outer_dev_um=(outer_t.ys - formed.outer.ys) * 1e3,
        thickness_dev_um=(np.asarray(formed.thickness_mm_at) - target.thickness_mm) * 1e3,
    )
