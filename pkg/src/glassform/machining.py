"""
Machining-error injection into precision molds and the resulting glass form error.

Errors are smooth random profiles: control points spaced one correlation
length apart take uniform values in [-tol, +tol] and are joined by a cubic
spline. The study reports how strongly a mold error is copied (or amplified)
into the formed glass.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.interpolate import CubicSpline

from .case import Case
from .compensation import CompensationResult, run_compensation
from .errors import RangeError, ValidationError
from .forming import MoldPair, compute_deviations, simulate_forming

log = logging.getLogger(__name__)

DEFAULT_CORRELATION_MM = 2.0
AMPLIFICATION_BOUND = 2.0
TRIAL_CSV_HEADER = [
    "tolerance_um", "trial", "max_dev_inner_um", "max_dev_outer_um",
    "peak_ratio", "global_ratio", "correlation",
]


@dataclass(frozen=True, eq=False)
class ErrorProfile:
    xs: np.ndarray
    e: np.ndarray  # mm
    tolerance_um: float
    seed: tuple[int, ...]
    correlation_length_mm: float

    @property
    def max_abs_um(self) -> float:
        return float(np.max(np.abs(self.e))) * 1e3


def _seed_tuple(seed) -> tuple[int, ...]:
    if isinstance(seed, (int, np.integer)):
        return (int(seed),)
    return tuple(int(s) for s in seed)


def generate_error_profile(
    grid,
    tolerance_um: float,
    correlation_length_mm: float = DEFAULT_CORRELATION_MM,
    seed: int | Sequence[int] = 0,
) -> ErrorProfile:
    """Smooth random height error on ``grid`` bounded by +-tolerance_um."""
    xs = np.asarray(grid, dtype=float)
    if tolerance_um < 0:
        raise ValidationError("tolerance must be non-negative")
    if correlation_length_mm <= 0:
        raise ValidationError("correlation length must be positive")
    span = xs[-1] - xs[0]
    if correlation_length_mm >= span:
        raise ValidationError(
            f"correlation length {correlation_length_mm} mm is not shorter than the grid span {span:.6g} mm"
        )
    key = _seed_tuple(seed)
    if tolerance_um == 0:
        return ErrorProfile(xs, np.zeros_like(xs), 0.0, key, correlation_length_mm)
    knots = np.arange(xs[0], xs[-1], correlation_length_mm)
    if xs[-1] - knots[-1] < 0.5 * correlation_length_mm:
        knots[-1] = xs[-1]
    else:
        knots = np.append(knots, xs[-1])
    rng = np.random.default_rng(np.random.SeedSequence(key))
    tol = tolerance_um * 1e-3
    values = rng.uniform(-tol, tol, size=len(knots))
    e = CubicSpline(knots, values)(xs)
    peak = np.max(np.abs(e))
    if peak > tol:
        # spline overshoot between knots
        e *= tol / peak
        np.clip(e, -tol, tol, out=e)
    return ErrorProfile(xs, e, float(tolerance_um), key, float(correlation_length_mm))


def perturb_molds(molds: MoldPair, upper_err: ErrorProfile, lower_err: ErrorProfile) -> MoldPair:
    """Add machining errors to each mold; both must live on the mold grid."""
    for err, label in ((upper_err, "upper"), (lower_err, "lower")):
        if len(err.xs) != len(molds.xs) or not np.allclose(err.xs, molds.xs, rtol=1e-12, atol=0):
            raise RangeError(f"{label} machining error is not sampled on the mold grid")
    return molds.with_heights(molds.upper.ys + upper_err.e, molds.lower.ys + lower_err.e)


@dataclass(frozen=True)
class TrialResult:
    tolerance_um: float
    trial: int
    max_dev_inner_um: float
    max_dev_outer_um: float
    peak_ratio: float
    global_ratio: float
    correlation: float

    @property
    def below_bound(self) -> bool:
        return bool(self.peak_ratio < AMPLIFICATION_BOUND)


@dataclass(frozen=True)
class LevelSummary:
    tolerance_um: float
    trials: int
    mean_max_dev_um: float
    max_max_dev_um: float
    mean_peak_ratio: float
    max_peak_ratio: float
    mean_global_ratio: float
    mean_correlation: float
    fraction_below_bound: float


@dataclass(frozen=True, eq=False)
class AmplificationReport:
    levels: list[LevelSummary]
    trials: list[TrialResult]
    base_seed: int
    correlation_length_mm: float
    precision_residual_um: float

    def to_json(self) -> str:
        return json.dumps(
            {
                "base_seed": self.base_seed,
                "correlation_length_mm": self.correlation_length_mm,
                "precision_residual_um": self.precision_residual_um,
                "amplification_bound": AMPLIFICATION_BOUND,
                "levels": [asdict(s) for s in self.levels],
                "trials": [dict(asdict(t), below_bound=t.below_bound) for t in self.trials],
            },
            indent=2,
        )

    def write_trials_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRIAL_CSV_HEADER)
            for t in self.trials:
                w.writerow([repr(float(getattr(t, k))) if k != "trial" else t.trial for k in TRIAL_CSV_HEADER])


def trial_seed(base_seed: int, trial: int, surface: int) -> tuple[int, int, int]:
    """Seed key of one mold's error in one trial; independent of the tolerance level."""
    return (int(base_seed), int(trial), int(surface))


def _surface_stats(dev_um: np.ndarray, err_um: np.ndarray) -> tuple[float, float, float]:
    """Peak ratio, global ratio and Pearson correlation of glass error vs mold error.

    ``dev_um`` follows the design-minus-formed convention, so the glass surface
    error that should mirror the mold error is its negative.
    """
    glass_err = -dev_um
    j = int(np.argmax(np.abs(glass_err)))
    e_max = np.max(np.abs(err_um))
    if e_max == 0:
        return float("nan"), float("nan"), float("nan")
    local = abs(err_um[j])
    peak = abs(glass_err[j]) / local if local > 0 else float("inf")
    glob = np.max(np.abs(glass_err)) / e_max
    if np.std(glass_err) == 0 or np.std(err_um) == 0:
        corr = float("nan")
    else:
        corr = float(np.corrcoef(err_um, glass_err)[0, 1])
    return float(peak), float(glob), corr


def _run_trial(args) -> TrialResult:
    case, molds, tol, trial, base_seed, corr_len = args
    eu = generate_error_profile(molds.xs, tol, corr_len, trial_seed(base_seed, trial, 0))
    el = generate_error_profile(molds.xs, tol, corr_len, trial_seed(base_seed, trial, 1))
    formed = simulate_forming(perturb_molds(molds, eu, el), case.target, case.schedule, case.config)
    rep = compute_deviations(formed, case.target)
    n = molds.glass_points
    # the glass point at x sits on the mold point m * x, which is node i of the mold grid
    stats_i = _surface_stats(rep.inner_dev_um, eu.e[:n] * 1e3)
    stats_o = _surface_stats(rep.outer_dev_um, el.e[:n] * 1e3)
    worst = stats_i if rep.max_inner_um >= rep.max_outer_um else stats_o
    return TrialResult(
        tolerance_um=float(tol),
        trial=int(trial),
        max_dev_inner_um=rep.max_inner_um,
        max_dev_outer_um=rep.max_outer_um,
        peak_ratio=worst[0],
        global_ratio=max(stats_i[1], stats_o[1]),
        correlation=0.5 * (stats_i[2] + stats_o[2]),
    )


def _summarize(tol: float, rows: list[TrialResult]) -> LevelSummary:
    dev = np.array([max(r.max_dev_inner_um, r.max_dev_outer_um) for r in rows])
    peak = np.array([r.peak_ratio for r in rows])
    return LevelSummary(
        tolerance_um=float(tol),
        trials=len(rows),
        mean_max_dev_um=float(dev.mean()),
        max_max_dev_um=float(dev.max()),
        mean_peak_ratio=float(np.mean(peak)),
        max_peak_ratio=float(np.max(peak)),
        mean_global_ratio=float(np.mean([r.global_ratio for r in rows])),
        mean_correlation=float(np.mean([r.correlation for r in rows])),
        fraction_below_bound=float(np.mean([r.below_bound for r in rows])),
    )


def amplification_study(
    case: Case,
    tolerance_levels: Sequence[float] = (10.0, 20.0, 30.0),
    trials: int = 20,
    base_seed: int = 0,
    correlation_length_mm: float = DEFAULT_CORRELATION_MM,
    compensation: CompensationResult | None = None,
    jobs: int = 1,
) -> AmplificationReport:
    """Monte Carlo sweep of machining tolerances on the precision molds of ``case``.

    Trial k uses the same seed keys at every tolerance level, so the levels
    differ only in the error amplitude.
    """
    if trials < 1:
        raise ValidationError("need at least one trial")
    if compensation is None:
        compensation = run_compensation(case.target, case.schedule, case.mold, case.config)
    if not compensation.converged:
        log.warning("precision molds did not converge; residual %.3g um", compensation.final_report.max_surface_um)
    molds = compensation.precision_molds
    tasks = [
        (case, molds, float(tol), k, base_seed, correlation_length_mm)
        for tol in tolerance_levels
        for k in range(trials)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_trial, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        results = [_run_trial(t) for t in tasks]
    levels = [
        _summarize(tol, [r for r in results if r.tolerance_um == float(tol)]) for tol in tolerance_levels
    ]
    return AmplificationReport(
        levels=levels,
        trials=results,
        base_seed=int(base_seed),
        correlation_length_mm=float(correlation_length_mm),
        precision_residual_um=compensation.final_report.max_surface_um,
    )
