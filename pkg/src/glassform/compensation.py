"""Displacement-adjustment loop turning initial molds into precision molds."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import RangeError, ValidationError
from .forming import (
    DeviationReport,
    FormingConfig,
    GlassTarget,
    MoldPair,
    compute_deviations,
    design_initial_molds,
    simulate_forming,
)
from .geometry import Profile, fd_derivatives, monotone_interpolator
from .materials import MoldMaterial, ThermalSchedule


@dataclass(frozen=True, eq=False)
class CompensationResult:
    precision_molds: MoldPair
    initial_molds: MoldPair
    fec_upper: Profile
    fec_lower: Profile
    iterations: int
    history: list[tuple[float, float, float]]
    converged: bool
    final_report: DeviationReport = field(repr=False)

    def history_json(self) -> str:
        rows = [
            {"iteration": i, "max_inner_um": a, "max_outer_um": b, "max_thickness_um": c}
            for i, (a, b, c) in enumerate(self.history)
        ]
        return json.dumps(
            {"converged": self.converged, "iterations": self.iterations, "history": rows}, indent=2
        )


def _to_mold_grid(molds: MoldPair, xs_target: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Map a field on the target grid onto the mold grid via x_mold = m * x_target.

    The overhang beyond the glass edge continues the field with its second-order
    Taylor polynomial at the edge.
    """
    x_mapped = molds.scale_m * np.asarray(xs_target, dtype=float)
    values = np.asarray(values, dtype=float)
    xm = molds.xs
    n = len(x_mapped)
    if x_mapped[-1] > xm[-1] * (1 + 1e-12):
        raise RangeError("target grid maps beyond the mold grid")
    if n <= len(xm) and np.allclose(xm[:n], x_mapped, rtol=1e-13, atol=0):
        inside = values
    else:
        covered = xm[xm <= x_mapped[-1]]
        inside = monotone_interpolator(x_mapped, values)(covered)
    out = np.empty(len(xm))
    k = len(inside)
    out[:k] = inside
    d1, d2 = fd_derivatives(x_mapped, values)
    u = xm[k:] - x_mapped[-1]
    out[k:] = values[-1] + d1[-1] * u + 0.5 * d2[-1] * u * u
    return out


def _from_mold_grid(molds: MoldPair, xs_target: np.ndarray, values: np.ndarray) -> np.ndarray:
    x_mapped = molds.scale_m * np.asarray(xs_target, dtype=float)
    n = len(x_mapped)
    if np.allclose(molds.xs[:n], x_mapped, rtol=1e-13, atol=0):
        return np.asarray(values[:n], dtype=float)
    return monotone_interpolator(molds.xs, values)(x_mapped)


def compensate_once(molds: MoldPair, report: DeviationReport, relaxation: float = 1.0) -> MoldPair:
    """Add the measured deviations (design minus formed) to both mold profiles."""
    if not 0.0 < relaxation <= 1.0:
        raise ValidationError("relaxation factor must lie in (0, 1]")
    du = _to_mold_grid(molds, report.xs, np.asarray(report.inner_dev_um) * 1e-3)
    dl = _to_mold_grid(molds, report.xs, np.asarray(report.outer_dev_um) * 1e-3)
    return molds.with_heights(molds.upper.ys + relaxation * du, molds.lower.ys + relaxation * dl)


def apply_fec(molds: MoldPair, fec_upper: Profile, fec_lower: Profile) -> MoldPair:
    """Add compensation profiles given on the target grid to a mold pair."""
    du = _to_mold_grid(molds, fec_upper.xs, fec_upper.ys)
    dl = _to_mold_grid(molds, fec_lower.xs, fec_lower.ys)
    return molds.with_heights(molds.upper.ys + du, molds.lower.ys + dl)


def fec_profiles(initial: MoldPair, final: MoldPair, xs_target: np.ndarray) -> tuple[Profile, Profile]:
    """Precision-minus-initial mold heights, expressed on the target grid."""
    fu = _from_mold_grid(initial, xs_target, final.upper.ys - initial.upper.ys)
    fl = _from_mold_grid(initial, xs_target, final.lower.ys - initial.lower.ys)
    return Profile(xs_target, fu), Profile(xs_target, fl)


def run_compensation(
    target: GlassTarget,
    schedule: ThermalSchedule,
    mold_material: MoldMaterial,
    config: FormingConfig,
    tolerance_um: float = 2.0,
    max_iters: int = 10,
    relaxation: float = 1.0,
) -> CompensationResult:
    """Iterate simulate / measure / compensate until both surfaces are within tolerance.

    Thickness deviation is recorded in the history but does not gate convergence.
    A run that exhausts ``max_iters`` returns ``converged=False``.
    """
    if tolerance_um <= 0:
        raise ValidationError("tolerance must be positive")
    initial = design_initial_molds(target, mold_material, schedule, config)
    molds = initial
    history: list[tuple[float, float, float]] = []
    converged = False
    it = 0
    while True:
        formed = simulate_forming(molds, target, schedule, config)
        report = compute_deviations(formed, target)
        history.append((report.max_inner_um, report.max_outer_um, report.max_thickness_um))
        if report.max_surface_um < tolerance_um:
            converged = True
            break
        if it >= max_iters:
            break
        molds = compensate_once(molds, report, relaxation)
        it += 1
    fu, fl = fec_profiles(initial, molds, report.xs)
    return CompensationResult(
        precision_molds=molds,
        initial_molds=initial,
        fec_upper=fu,
        fec_lower=fl,
        iterations=it,
        history=history,
        converged=converged,
        final_report=report,
    )
