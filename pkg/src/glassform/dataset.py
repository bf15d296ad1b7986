"""
Training data for the compensation surrogate.

Design cases are drawn from a box of geometry and process parameters with a
Latin hypercube, each case is run through the compensation loop, and a few
dimensionless feature rows are extracted per case.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from . import __version__
from .case import Case
from .compensation import run_compensation
from .errors import DomainError, ValidationError
from .forming import FormingConfig, GlassTarget, default_config
from .geometry import AsphericSurface, monotone_interpolator
from .materials import ThermalSchedule, glass_material, mold_material
from .surrogate import FeatureRow, feature_matrix

log = logging.getLogger(__name__)

CSV_HEADER = [
    "case_id", "x_mm", "X", "T_bar", "K_bar", "angle_rad",
    "anneal_rate_c_per_s", "t_mold_c", "fec_u_bar", "fec_l_bar",
]
TRAINING_R_MAX_LIMIT = 20.0
X_BAND = (0.0, 1.0)
MAX_REJECTION = 0.9


@dataclass(frozen=True)
class DesignSpace:
    curvature_c: tuple[float, float] = (0.01, 0.06)
    conic_k: tuple[float, float] = (-3.0, 0.0)
    # ranges of the aspheric coefficients of x^2, x^4, ...
    aspheric: tuple[tuple[float, float], ...] = ((0.0, 2e-5),)
    r_max_mm: tuple[float, float] = (8.0, 20.0)
    thickness_mm: tuple[float, float] = (0.5, 1.1)
    molding_temperature_c: tuple[float, float] = (650.0, 750.0)
    annealing_rate_c_per_s: tuple[float, float] = (0.5, 5.0)
    glass: str = "GG"
    mold: str = "glassy_carbon"
    rows_per_case: int = 7
    # rows are stratified over this range of X = x / r_max
    x_band: tuple[float, float] = X_BAND
    enforce_training_limit: bool = True

    def __post_init__(self):
        object.__setattr__(self, "aspheric", tuple(tuple(map(float, r)) for r in self.aspheric))
        for name, (lo, hi) in self._ranges():
            if not (np.isfinite(lo) and np.isfinite(hi)) or lo > hi:
                raise ValidationError(f"range {name} = [{lo}, {hi}] is empty")
        if self.r_max_mm[0] <= 0 or self.thickness_mm[0] <= 0 or self.annealing_rate_c_per_s[0] <= 0:
            raise ValidationError("radius, thickness and annealing rate ranges must be positive")
        if self.enforce_training_limit and self.r_max_mm[1] > TRAINING_R_MAX_LIMIT:
            raise ValidationError(f"training cases need r_max <= {TRAINING_R_MAX_LIMIT} mm")
        if self.rows_per_case < 1:
            raise ValidationError("rows_per_case must be positive")
        object.__setattr__(self, "x_band", tuple(map(float, self.x_band)))
        _check_band(self.x_band)

    def _ranges(self) -> list[tuple[str, tuple[float, float]]]:
        out = [("curvature_c", self.curvature_c), ("conic_k", self.conic_k)]
        out += [(f"a{i + 1}", r) for i, r in enumerate(self.aspheric)]
        out += [
            ("r_max_mm", self.r_max_mm),
            ("thickness_mm", self.thickness_mm),
            ("molding_temperature_c", self.molding_temperature_c),
            ("annealing_rate_c_per_s", self.annealing_rate_c_per_s),
        ]
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["aspheric"] = [list(r) for r in self.aspheric]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DesignSpace":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown design-space keys: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            if k == "aspheric":
                kw[k] = tuple(tuple(r) for r in v)
            elif isinstance(v, list):
                kw[k] = tuple(v)
            else:
                kw[k] = v
        return cls(**kw)


def _build_case(name: str, values: np.ndarray, space: DesignSpace, config: FormingConfig) -> Case:
    na = len(space.aspheric)
    c, k = values[0], values[1]
    a = tuple(values[2 : 2 + na])
    r, t, tm, rate = values[2 + na :]
    surface = AsphericSurface(float(c), float(k), a, float(r))
    target = GlassTarget(surface, float(t), glass_material(space.glass), float(r))
    schedule = ThermalSchedule(molding_temperature_c=float(tm), annealing_rate_c_per_s=float(rate))
    return Case(name, target, mold_material(space.mold), schedule, config)


def sample_design_space(
    space: DesignSpace,
    n_cases: int,
    seed: int = 0,
    config: FormingConfig | None = None,
) -> list[Case]:
    """Latin-hypercube cases from ``space``; invalid surfaces are rejected and redrawn."""
    if n_cases < 1:
        raise ValidationError("n_cases must be at least 1")
    config = config or default_config()
    ranges = np.array([r for _, r in space._ranges()], dtype=float)
    sampler = qmc.LatinHypercube(d=len(ranges), seed=np.random.default_rng(seed))
    cases: list[Case] = []
    drawn = 0
    while len(cases) < n_cases:
        batch = max(n_cases - len(cases), 8)
        u = sampler.random(batch)
        drawn += batch
        for row in ranges[:, 0] + u * (ranges[:, 1] - ranges[:, 0]):
            if len(cases) == n_cases:
                break
            try:
                cases.append(_build_case(f"case_{len(cases):04d}", row, space, config))
            except (DomainError, ValidationError):
                continue
        rejected = 1.0 - len(cases) / drawn
        if drawn >= 10 * n_cases and rejected > MAX_REJECTION:
            raise ValidationError(
                f"{rejected:.0%} of sampled designs are invalid; the design-space ranges are inconsistent"
            )
    return cases


@dataclass(eq=False)
class Dataset:
    rows: list[FeatureRow]
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        seen = set()
        for r in self.rows:
            key = (r.case_id, r.X)
            if key in seen:
                raise ValidationError(f"duplicate row {key}")
            seen.add(key)

    def __len__(self):
        return len(self.rows)

    @property
    def case_ids(self) -> list[str]:
        return sorted({r.case_id for r in self.rows})

    def subset(self, case_ids) -> "Dataset":
        keep = set(case_ids)
        return Dataset([r for r in self.rows if r.case_id in keep], self.manifest)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for r in self.rows:
                w.writerow([r.case_id] + [repr(float(getattr(r, k))) for k in CSV_HEADER[1:]])

    @classmethod
    def read_csv(cls, path: str | Path, manifest: dict | None = None) -> "Dataset":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != CSV_HEADER:
                raise ValidationError(f"{path}: unexpected dataset header {header}")
            rows = [FeatureRow(rec[0], *map(float, rec[1:])) for rec in reader]
        return cls(rows, manifest or {})

    def write_manifest(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.manifest, indent=2, sort_keys=True))


def config_hash(*parts: dict) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _check_band(band) -> None:
    if len(band) != 2 or not 0.0 <= band[0] < band[1] <= 1.0:
        raise ValidationError(f"x_band {tuple(band)} must satisfy 0 <= lo < hi <= 1")


def stratified_positions(n: int, rng: np.random.Generator, band=X_BAND) -> np.ndarray:
    """One uniform draw inside each of n equal strata of ``band``."""
    edges = np.linspace(band[0], band[1], n + 1)
    return edges[:-1] + rng.random(n) * np.diff(edges)


def _case_task(args):
    case, tolerance_um, max_iters, rows_per_case, seed_key, band = args
    res = run_compensation(case.target, case.schedule, case.mold, case.config, tolerance_um, max_iters)
    entry = {
        "case_id": case.name,
        "converged": bool(res.converged),
        "iterations": res.iterations,
        "final_max_um": res.final_report.max_surface_um,
        "definition": case.to_dict(),
    }
    if not res.converged:
        return entry, []
    rng = np.random.default_rng(np.random.SeedSequence(seed_key))
    X = stratified_positions(rows_per_case, rng, band)
    R = case.r_max_mm
    F = feature_matrix(case.target, case.schedule, X)
    x = X * R
    fu = monotone_interpolator(res.fec_upper.xs, res.fec_upper.ys)(x) / R
    fl = monotone_interpolator(res.fec_lower.xs, res.fec_lower.ys)(x) / R
    rows = [
        FeatureRow(case.name, float(x[i]), *map(float, F[i]), float(fu[i]), float(fl[i]))
        for i in range(len(X))
    ]
    return entry, rows


def generate_dataset(
    cases: Sequence[Case],
    tolerance_um: float = 2.0,
    rows_per_case: int = 7,
    seed: int = 0,
    max_iters: int = 10,
    jobs: int = 1,
    extra_manifest: dict | None = None,
    x_band: tuple[float, float] = X_BAND,
) -> Dataset:
    """Run the compensation loop on each case and extract feature rows.

    Non-converged cases contribute no rows but stay in the manifest.
    """
    if not cases:
        raise ValidationError("no cases given")
    _check_band(x_band)
    band = (float(x_band[0]), float(x_band[1]))
    tasks = [(c, tolerance_um, max_iters, rows_per_case, (int(seed), i), band) for i, c in enumerate(cases)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_case_task, tasks))
    else:
        results = [_case_task(t) for t in tasks]
    entries = [e for e, _ in results]
    rows = [r for _, rs in results for r in rs]
    dropped = [e["case_id"] for e in entries if not e["converged"]]
    for cid in dropped:
        log.warning("case %s did not converge and is excluded", cid)
    if not rows:
        raise ValidationError("no case converged; the dataset is empty")
    rows.sort(key=lambda r: (r.case_id, r.X))
    manifest = {
        "generator_version": __version__,
        "seed": int(seed),
        "tolerance_um": tolerance_um,
        "rows_per_case": rows_per_case,
        "x_band": list(band),
        "max_iters": max_iters,
        "config_hash": config_hash([e["definition"] for e in entries], {"tol": tolerance_um, "rows": rows_per_case, "band": list(band)}),
        "n_rows": len(rows),
        "dropped_cases": dropped,
        "cases": entries,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    return Dataset(rows, manifest)


def split_dataset(ds: Dataset, ratio: float = 0.7, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Case-level split; the train side gets round(ratio * n_cases) whole cases."""
    ids = ds.case_ids
    if len(ids) < 2:
        raise ValidationError("need at least two cases to split")
    if not 0.0 < ratio < 1.0:
        raise ValidationError("split ratio must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ids))
    n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
    train_ids = [ids[i] for i in order[:n_train]]
    test_ids = [ids[i] for i in order[n_train:]]
    return ds.subset(train_ids), ds.subset(test_ids)


def cases_from_manifest(manifest: dict) -> dict[str, Case]:
    return {e["case_id"]: Case.from_dict(e["definition"]) for e in manifest.get("cases", [])}
