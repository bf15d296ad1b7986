"""
Axisymmetric generatrix geometry: even-asphere sag, differential geometry
of the revolved surface, normal offsets and shape-preserving resampling.

All lengths are in millimetres.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import DomainError, GeometryError, RangeError, ValidationError

MIN_PROFILE_POINTS = 16
DEFAULT_GRID_POINTS = 201


@dataclass(frozen=True)
class AsphericSurface:
    """Even asphere y = c x^2 / (1 + sqrt(1 - (K+1) c^2 x^2)) + sum a_i x^(2i).

    ``aspheric_coeffs[0]`` multiplies x^2, ``[1]`` x^4, and so on.
    """

    curvature_c: float
    conic_k: float
    aspheric_coeffs: tuple[float, ...]
    r_max_mm: float

    def __post_init__(self):
        object.__setattr__(self, "aspheric_coeffs", tuple(float(a) for a in self.aspheric_coeffs))
        if self.r_max_mm <= 0:
            raise ValidationError("r_max_mm must be positive")
        x_lim = self.radicand_limit()
        if x_lim is not None and x_lim < self.r_max_mm:
            raise DomainError(
                f"conic radicand turns negative at x = {x_lim:.6g} mm < r_max = {self.r_max_mm:g} mm"
            )

    def radicand_limit(self) -> float | None:
        """Largest x with a non-negative conic radicand, None if unbounded."""
        q = (self.conic_k + 1.0) * self.curvature_c**2
        return None if q <= 0 else 1.0 / np.sqrt(q)

    def scaled(self, lam: float) -> "AsphericSurface":
        """Surface of the geometrically similar part with all lengths times lam."""
        coeffs = tuple(a * lam ** (1 - 2 * (i + 1)) for i, a in enumerate(self.aspheric_coeffs))
        return AsphericSurface(self.curvature_c / lam, self.conic_k, coeffs, self.r_max_mm * lam)

    def to_dict(self) -> dict:
        return {"c": self.curvature_c, "k": self.conic_k, "a": list(self.aspheric_coeffs), "r_max_mm": self.r_max_mm}

    @classmethod
    def from_dict(cls, d: dict) -> "AsphericSurface":
        return cls(float(d["c"]), float(d["k"]), tuple(d.get("a", ())), float(d["r_max_mm"]))


@dataclass(frozen=True, eq=False)
class Profile:
    """Sampled generatrix: strictly increasing radii starting at the axis."""

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        xs = np.array(self.xs, dtype=float)
        ys = np.array(self.ys, dtype=float)
        if xs.ndim != 1 or xs.shape != ys.shape:
            raise ValidationError("profile xs and ys must be 1-D arrays of equal length")
        if len(xs) < MIN_PROFILE_POINTS:
            raise ValidationError(f"profile needs at least {MIN_PROFILE_POINTS} points, got {len(xs)}")
        if xs[0] != 0.0:
            raise ValidationError(f"profile must start on the axis (xs[0] = {xs[0]})")
        if np.any(np.diff(xs) <= 0):
            raise ValidationError("profile xs must be strictly increasing")
        if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
            raise ValidationError("profile contains non-finite values")
        xs.flags.writeable = False
        ys.flags.writeable = False
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)

    @property
    def r_max_mm(self) -> float:
        return float(self.xs[-1])

    def __len__(self):
        return len(self.xs)

    def scaled(self, lam: float) -> "Profile":
        return Profile(self.xs * lam, self.ys * lam)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_mm", "y_mm"])
            for x, y in zip(self.xs, self.ys):
                w.writerow([repr(float(x)), repr(float(y))])

    @classmethod
    def from_csv(cls, path: str | Path) -> "Profile":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0] != ["x_mm", "y_mm"]:
            raise ValidationError(f"{path}: expected header x_mm,y_mm")
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return cls(data[:, 0], data[:, 1])


@dataclass(frozen=True, eq=False)
class LocalGeometry:
    inclination_rad: np.ndarray
    plane_curvature_per_mm: np.ndarray
    gaussian_curvature_per_mm2: np.ndarray


def load_surface(path: str | Path) -> AsphericSurface:
    with open(path) as fh:
        return AsphericSurface.from_dict(json.load(fh))


def save_surface(surface: AsphericSurface, path: str | Path) -> None:
    with open(path, "w") as fh:
        json.dump(surface.to_dict(), fh, indent=2)


def aspheric_eval(surface: AsphericSurface, x):
    """Sag and its first two derivatives, all in closed form.

    Returns (y, dy/dx, d2y/dx2) with the shape of ``x``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0) or np.any(xa > surface.r_max_mm * (1 + 1e-12)):
        raise DomainError(f"x outside [0, {surface.r_max_mm}]")
    return _sag(surface, xa)


def _sag(surface: AsphericSurface, xa: np.ndarray):
    c, k = surface.curvature_c, surface.conic_k
    q = (k + 1.0) * c * c
    rad = 1.0 - q * xa * xa
    if np.any(rad < 0):
        raise DomainError(f"conic radicand negative beyond x = {surface.radicand_limit():.6g} mm")
    s = np.sqrt(rad)
    y = c * xa * xa / (1.0 + s)
    dy = c * xa / s
    d2y = c / s**3
    for i, a in enumerate(surface.aspheric_coeffs):
        p = 2 * (i + 1)
        y = y + a * xa**p
        dy = dy + p * a * xa ** (p - 1)
        d2y = d2y + p * (p - 1) * a * xa ** (p - 2)
    if xa.ndim == 0:
        return float(y), float(dy), float(d2y)
    return y, dy, d2y


def sample_surface(surface: AsphericSurface, n: int = DEFAULT_GRID_POINTS) -> Profile:
    xs = np.linspace(0.0, surface.r_max_mm, n)
    return Profile(xs, _sag(surface, xs)[0])


def fd_derivatives(xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """First and second derivatives on a (possibly non-uniform) grid.

    The slope uses five-point (fourth-order) stencils where two neighbours exist
    on each side, three-point central stencils next to the ends and second-order
    one-sided stencils at the ends. The second derivative is second order
    throughout.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    dy = np.gradient(ys, xs, edge_order=2)
    if len(xs) >= 5:
        dy[2:-2] = _five_point_slope(xs, ys)
    h1 = xs[1:-1] - xs[:-2]
    h2 = xs[2:] - xs[1:-1]
    d2 = np.empty_like(ys)
    d2[1:-1] = 2.0 * (h1 * ys[2:] - (h1 + h2) * ys[1:-1] + h2 * ys[:-2]) / (h1 * h2 * (h1 + h2))
    d2[0] = _second_derivative_4pt(xs[:4], ys[:4], xs[0])
    d2[-1] = _second_derivative_4pt(xs[-4:], ys[-4:], xs[-1])
    return dy, d2


def _five_point_slope(xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    # weights w with sum_j w_j d_j^p = [p == 1] for offsets d_j, p = 0..4
    idx = np.arange(2, len(xs) - 2)[:, None] + np.arange(-2, 3)
    h = (xs[idx[:, 3]] - xs[idx[:, 1]])[:, None]
    d = (xs[idx] - xs[idx[:, 2:3]]) / h
    vander = d[:, None, :] ** np.arange(5)[None, :, None]
    rhs = np.zeros((len(idx), 5, 1))
    rhs[:, 1, 0] = 1.0
    w = np.linalg.solve(vander, rhs)[:, :, 0]
    return np.sum(w * ys[idx], axis=1) / h[:, 0]


def _second_derivative_4pt(x4, y4, at) -> float:
    # second derivative of the cubic through four points
    coeffs = np.polyfit(x4 - at, y4, 3)
    return 2.0 * coeffs[1]


def _curvatures(x, dy, d2y):
    slope2 = 1.0 + dy * dy
    kappa = d2y / slope2**1.5
    with np.errstate(divide="ignore", invalid="ignore"):
        gauss = np.where(x > 0, dy * d2y / (np.where(x > 0, x, 1.0) * slope2**2), d2y * d2y / slope2**2)
    return np.arctan(dy), kappa, gauss


def local_geometry(shape: Profile | AsphericSurface, xs=None) -> LocalGeometry:
    """Inclination, plane curvature and Gaussian curvature of the revolved surface.

    For an ``AsphericSurface`` the derivatives are analytic, evaluated on ``xs``
    (default: the 201-point working grid). A ``Profile`` uses finite differences
    on its own nodes.
    """
    if isinstance(shape, AsphericSurface):
        x = np.linspace(0.0, shape.r_max_mm, DEFAULT_GRID_POINTS) if xs is None else np.asarray(xs, float)
        _, dy, d2y = aspheric_eval(shape, x)
    else:
        x = shape.xs
        dy, d2y = fd_derivatives(shape.xs, shape.ys)
    angle, kappa, gauss = _curvatures(np.asarray(x), np.asarray(dy), np.asarray(d2y))
    return LocalGeometry(angle, kappa, gauss)


def monotone_interpolator(xs, ys) -> CubicHermiteSpline:
    """Shape-preserving cubic Hermite interpolant.

    Node slopes come from a not-a-knot cubic spline and are limited so that the
    interpolant stays monotone on every interval where the data are monotone;
    at data extrema the slope is zero. Away from extrema this keeps spline
    accuracy, unlike harmonic-mean slope estimates.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    secant = np.diff(ys) / np.diff(xs)
    d = CubicSpline(xs, ys)(xs, 1) if len(xs) > 3 else np.gradient(ys, xs)
    left = np.concatenate(([secant[0]], secant))
    right = np.concatenate((secant, [secant[-1]]))
    prod = left * right
    sgn = np.sign(right)
    bound = 3.0 * np.minimum(np.abs(left), np.abs(right))
    limited = sgn * np.minimum(np.maximum(sgn * d, 0.0), bound)
    slopes = np.where(prod > 0, limited, 0.0)
    return CubicHermiteSpline(xs, ys, slopes)


def resample(profile: Profile, grid) -> Profile:
    """Shape-preserving cubic resampling of a profile onto a new radial grid."""
    grid = np.asarray(grid, dtype=float)
    lo, hi = profile.xs[0], profile.xs[-1]
    tol = 1e-12 * max(1.0, abs(hi))
    if grid.min() < lo - tol or grid.max() > hi + tol:
        raise RangeError(
            f"resample grid [{grid.min():g}, {grid.max():g}] extrapolates beyond profile range [{lo:g}, {hi:g}]"
        )
    ys = monotone_interpolator(profile.xs, profile.ys)(np.clip(grid, lo, hi))
    # node values are reproduced bit for bit
    pos = np.clip(np.searchsorted(profile.xs, grid), 0, len(profile.xs) - 1)
    hit = profile.xs[pos] == grid
    ys[hit] = profile.ys[pos[hit]]
    return Profile(grid, ys)


def offset_points(xs, ys, slopes, distance: float) -> tuple[np.ndarray, np.ndarray]:
    """Points displaced by ``distance`` along the unit normal (-sin t, cos t)."""
    theta = np.arctan(slopes)
    return xs - distance * np.sin(theta), ys + distance * np.cos(theta)


def _check_offset(xs, kappa, distance, ox):
    # offsetting toward the centre of curvature collapses once |d| >= radius
    if np.any(distance * kappa >= 1.0):
        i = int(np.argmax(distance * kappa))
        raise GeometryError(
            f"offset of {distance:g} mm exceeds the local radius of curvature {1.0 / kappa[i]:.6g} mm "
            f"at x = {xs[i]:.6g} mm"
        )
    if np.any(np.diff(ox) <= 0):
        raise GeometryError("offset curve self-intersects (x no longer increasing)")


def normal_offset(profile: Profile, distance: float, side: str | int = "+y", grid=None,
                  slopes=None) -> Profile:
    """Offset a generatrix along its normals and re-sample it on a monotone x grid.

    ``side`` is ``"+y"``/``+1`` or ``"-y"``/``-1``. The result lives on ``grid``
    (default: the input nodes covered by the offset curve). ``slopes`` may carry
    exact dy/dx at the nodes; otherwise finite differences are used.
    """
    sign = _side_sign(side)
    d = sign * float(distance)
    if d == 0.0:
        return profile if grid is None else resample(profile, grid)
    dy, d2y = fd_derivatives(profile.xs, profile.ys)
    if slopes is not None:
        dy = np.asarray(slopes, dtype=float)
    kappa = d2y / (1.0 + dy * dy) ** 1.5
    ox, oy = offset_points(profile.xs, profile.ys, dy, d)
    _check_offset(profile.xs, kappa, d, ox)
    if ox[0] != 0.0:
        # the axis point has zero slope only for a symmetric generatrix
        if abs(ox[0]) > 1e-9 * max(1.0, profile.r_max_mm):
            raise GeometryError(f"offset leaves the axis (x0 = {ox[0]:g}); profile slope at axis is not zero")
        ox = ox.copy()
        ox[0] = 0.0
    if grid is None:
        grid = profile.xs[profile.xs <= ox[-1]]
    grid = np.asarray(grid, dtype=float)
    if grid.max() > ox[-1] * (1 + 1e-12):
        raise RangeError(f"offset curve reaches only x = {ox[-1]:g} mm; grid extends to {grid.max():g} mm")
    ys = monotone_interpolator(ox, oy)(np.minimum(grid, ox[-1]))
    return Profile(grid, ys)


def _side_sign(side) -> int:
    if side in ("+y", "+", 1, "up"):
        return 1
    if side in ("-y", "-", -1, "down"):
        return -1
    raise ValidationError(f"side must be '+y' or '-y', got {side!r}")


def nondimensionalize(x, thickness, gaussian_K, fec, r_max):
    """Scale geometric quantities by the maximum radius.

    Returns (X, T_bar, K_bar, FEC_bar); inclination is already dimensionless
    and is not touched. ``fec`` may be None.
    """
    if not r_max > 0:
        raise DomainError(f"r_max must be positive, got {r_max}")
    X = np.asarray(x, dtype=float) / r_max
    T = np.asarray(thickness, dtype=float) / r_max
    K = np.asarray(gaussian_K, dtype=float) * r_max**2
    F = None if fec is None else np.asarray(fec, dtype=float) / r_max
    return X, T, K, F


def dimensionalize(X, T_bar, K_bar, fec_bar, r_max):
    """Inverse of :func:`nondimensionalize`."""
    if not r_max > 0:
        raise DomainError(f"r_max must be positive, got {r_max}")
    x = np.asarray(X, dtype=float) * r_max
    t = np.asarray(T_bar, dtype=float) * r_max
    K = np.asarray(K_bar, dtype=float) / r_max**2
    F = None if fec_bar is None else np.asarray(fec_bar, dtype=float) * r_max
    return x, t, K, F
