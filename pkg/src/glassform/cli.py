"""Command-line entry point: ``glassform <command> ...``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .case import Case, load_case
from .compensation import apply_fec, run_compensation
from .dataset import Dataset, DesignSpace, config_hash, generate_dataset, sample_design_space, split_dataset
from .errors import GlassformError
from .forming import FormingConfig, compute_deviations, default_config, design_initial_molds, simulate_forming
from .machining import amplification_study
from .materials import MaterialProperties, load_catalog
from .surrogate import (
    TrainConfig,
    init_network,
    load_model,
    predict_fec,
    save_model,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NOT_CONVERGED = 2
EXIT_USAGE = 64
DATASET_TOLERANCE_UM = 0.05
EDGE_X = 0.95
FEC_BAR_TOL = 1e-4

log = logging.getLogger("glassform")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config_hash: str = ""
    seeds: dict = field(default_factory=dict)
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    config_sources: list[str] = field(default_factory=list)
    started: float = field(default_factory=time.time)

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "run_manifest.json"
        doc = {
            "command": self.command,
            "argv": self.argv,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "config_sources": self.config_sources,
            "wall_time_s": time.time() - self.started,
            "timestamp": datetime.now(timezone.utc).isoformat(),
            "versions": {
                "glassform": __version__,
                "numpy": np.__version__,
                "scipy": scipy.__version__,
                "python": platform.python_version(),
            },
        }
        missing = [p for p in self.outputs if not Path(p).exists()]
        if missing:
            raise GlassformError(f"declared outputs were not written: {missing}")
        path.write_text(json.dumps(doc, indent=2))
        return path


def _fmt(v) -> str:
    return repr(float(v))


def _write_csv(path: Path, header: list[str], columns) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([_fmt(v) for v in row])


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _base_config(sources: list[str]) -> FormingConfig:
    cfg = default_config()
    sources.append("built-in defaults")
    env = os.environ.get("GLASSFORM_CONFIG")
    if env:
        try:
            overrides = json.loads(Path(env).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise GlassformError(f"GLASSFORM_CONFIG={env}: {exc}") from None
        cfg = cfg.with_overrides({k: v for k, v in overrides.items() if not k.startswith("_")})
        sources.append(f"GLASSFORM_CONFIG={env}")
    return cfg


def _parse_sets(pairs: list[str] | None) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise UsageError(f"--set expects key=value, got {item!r}")
        out[key.strip()] = float(value)
    return out


def _load_case(args, manifest: RunManifest) -> Case:
    path = Path(args.case)
    if not path.is_file():
        raise GlassformError(f"case file not found: {path}")
    manifest.inputs.append(str(path))
    case = load_case(path, _base_config(manifest.config_sources))
    manifest.config_sources.append(f"case file {path}")
    flags = _parse_sets(getattr(args, "set", None))
    if flags:
        case = replace(case, config=case.config.with_overrides(flags))
        manifest.config_sources.append("command-line --set")
    manifest.config_hash = config_hash(case.to_dict())
    return case


# ---- commands ---------------------------------------------------------------


def cmd_materials(args, manifest: RunManifest) -> int:
    catalog = load_catalog(args.catalog)
    for name, entry in catalog.items():
        if isinstance(entry, MaterialProperties):
            print(
                f"{name:14s} glass  E={entry.youngs_modulus_gpa:g} GPa  nu={entry.poisson_ratio:g}  "
                f"cte={entry.cte_below_tg_per_c:.3g}/{entry.cte_above_tg_per_c:.3g} 1/C  Tg={entry.tg_c:g} C"
            )
        else:
            print(f"{name:14s} mold   cte={entry.cte_per_c:.3g} 1/C")
    return EXIT_OK


def cmd_simulate(args, manifest: RunManifest) -> int:
    case = _load_case(args, manifest)
    out = _out_dir(args)
    molds = design_initial_molds(case.target, case.mold, case.schedule, case.config)
    report = compute_deviations(simulate_forming(molds, case.target, case.schedule, case.config), case.target)
    path = out / "deviations.csv"
    report.to_csv(path)
    manifest.outputs.append(str(path))
    print(
        f"max deviation: inner {report.max_inner_um:.3f} um, outer {report.max_outer_um:.3f} um, "
        f"thickness {report.max_thickness_um:.3f} um"
    )
    return EXIT_OK


def cmd_design(args, manifest: RunManifest) -> int:
    case = _load_case(args, manifest)
    out = _out_dir(args)
    res = run_compensation(case.target, case.schedule, case.mold, case.config, args.tol_um, args.max_iters)
    pm = res.precision_molds
    molds_csv, fec_csv, hist = out / "precision_molds.csv", out / "fec.csv", out / "history.json"
    _write_csv(molds_csv, ["x_mm", "y_upper_mm", "y_lower_mm"], (pm.xs, pm.upper.ys, pm.lower.ys))
    _write_csv(fec_csv, ["x_mm", "fec_upper_mm", "fec_lower_mm"], (res.fec_upper.xs, res.fec_upper.ys, res.fec_lower.ys))
    hist.write_text(res.history_json())
    manifest.outputs += [str(molds_csv), str(fec_csv), str(hist)]
    last = res.history[-1]
    print(f"iterations {res.iterations}, final max deviation inner {last[0]:.4f} um, outer {last[1]:.4f} um")
    if not res.converged:
        print(f"not converged within {args.max_iters} iterations", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_tolerance(args, manifest: RunManifest) -> int:
    case = _load_case(args, manifest)
    out = _out_dir(args)
    tols = [float(t) for t in args.tols.split(",") if t.strip()]
    manifest.seeds["base_seed"] = args.seed
    report = amplification_study(
        case, tols, args.trials, args.seed, correlation_length_mm=args.corr_mm, jobs=args.jobs
    )
    rj, rc = out / "amplification.json", out / "trials.csv"
    rj.write_text(report.to_json())
    report.write_trials_csv(rc)
    manifest.outputs += [str(rj), str(rc)]
    for s in report.levels:
        print(
            f"tol {s.tolerance_um:g} um: mean max dev {s.mean_max_dev_um:.3f} um, peak ratio {s.mean_peak_ratio:.3f}, "
            f"correlation {s.mean_correlation:.3f}, below 2x in {s.fraction_below_bound:.0%} of trials"
        )
    return EXIT_OK


def cmd_dataset_gen(args, manifest: RunManifest) -> int:
    if args.space:
        manifest.inputs.append(args.space)
        try:
            space = DesignSpace.from_dict(json.loads(Path(args.space).read_text()))
        except OSError as exc:
            raise GlassformError(f"cannot read design space {args.space}: {exc}") from None
    else:
        space = DesignSpace()
    if args.rows_per_case:
        space = replace(space, rows_per_case=args.rows_per_case)
    cfg = _base_config(manifest.config_sources).with_overrides(_parse_sets(args.set))
    manifest.seeds["seed"] = args.seed
    cases = sample_design_space(space, args.cases, args.seed, cfg)
    ds = generate_dataset(
        cases,
        tolerance_um=args.tol_um,
        rows_per_case=space.rows_per_case,
        seed=args.seed,
        jobs=args.jobs,
        x_band=space.x_band,
        extra_manifest={"design_space": space.to_dict(), "forming": cfg.to_dict()},
    )
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ds.write_csv(out)
    mpath = out.with_suffix(".manifest.json")
    ds.write_manifest(mpath)
    manifest.outputs += [str(out), str(mpath)]
    manifest.config_hash = ds.manifest["config_hash"]
    print(f"{len(ds)} rows from {len(ds.case_ids)} converged cases ({len(ds.manifest['dropped_cases'])} dropped)")
    return EXIT_OK


def cmd_train(args, manifest: RunManifest) -> int:
    data = Path(args.data)
    if not data.is_file():
        raise GlassformError(f"dataset not found: {data}")
    manifest.inputs.append(str(data))
    ds = Dataset.read_csv(data)
    tr, te = split_dataset(ds, args.split, args.seed)
    out = _out_dir(args)
    cfg = TrainConfig(max_epochs=args.max_epochs, early_stop_patience=args.patience, seed=args.seed)
    manifest.seeds.update(split=args.seed, init=args.seed, shuffle=args.seed)
    reports = {}
    nets = {}
    for surface in ("upper", "lower"):
        net, rep = train(init_network(args.seed, surface), tr.rows, te.rows, cfg)
        path = out / f"{surface}.json"
        save_model(net, path)
        nets[surface] = net
        manifest.outputs.append(str(path))
        reports[surface] = {k: v for k, v in rep.to_dict().items() if not k.endswith("curve")}
        reports[surface]["loss_curve_train"] = rep.train_curve
        reports[surface]["loss_curve_test"] = rep.test_curve
        print(f"{surface}: epochs {rep.epochs}, train R2 {rep.train_r2:.4f}, test R2 {rep.test_r2:.4f}")
    pred_path = out / "predictions.csv"
    with open(pred_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["case_id", "split", "X", "surface", "target_fec_bar", "predicted_fec_bar"])
        for split_name, part in (("train", tr), ("test", te)):
            F = np.array([r.features() for r in part.rows])
            for surface, net in nets.items():
                pred = net.predict(F)
                for r, p in zip(part.rows, pred):
                    w.writerow([r.case_id, split_name, _fmt(r.X), surface, _fmt(r.target(surface)), _fmt(p)])
    rpath = out / "train_report.json"
    rpath.write_text(
        json.dumps(
            {"split_ratio": args.split, "train_cases": tr.case_ids, "test_cases": te.case_ids, "surfaces": reports},
            indent=2,
        )
    )
    manifest.outputs += [str(pred_path), str(rpath)]
    return EXIT_OK


def _load_models(args, manifest: RunManifest):
    mdir = Path(args.models)
    paths = {s: mdir / f"{s}.json" for s in ("upper", "lower")}
    manifest.inputs += [str(p) for p in paths.values()]
    return load_model(paths["upper"], "upper"), load_model(paths["lower"], "lower")


def cmd_predict(args, manifest: RunManifest) -> int:
    case = _load_case(args, manifest)
    up, lo = _load_models(args, manifest)
    out = _out_dir(args)
    fu, fl = predict_fec(up, lo, case.target, case.schedule, case.config.grid_points)
    path = out / "fec_predicted.csv"
    _write_csv(path, ["x_mm", "fec_upper_mm", "fec_lower_mm"], (fu.xs, fu.ys, fl.ys))
    manifest.outputs.append(str(path))
    print(f"predicted FEC written to {path}")
    return EXIT_OK


def validate_case(case: Case, up, lo, tolerance_um: float = DATASET_TOLERANCE_UM, max_iters: int = 10) -> dict:
    """Compare predicted and loop-computed compensation for one case."""
    res = run_compensation(case.target, case.schedule, case.mold, case.config, tolerance_um, max_iters)
    n = case.config.grid_points
    fu, fl = predict_fec(up, lo, case.target, case.schedule, n)
    R = case.r_max_mm
    X = fu.xs / R
    err_u = (fu.ys - res.fec_upper.ys) / R
    err_l = (fl.ys - res.fec_lower.ys) / R
    interior = X <= EDGE_X
    within = np.concatenate((np.abs(err_u[interior]) <= FEC_BAR_TOL, np.abs(err_l[interior]) <= FEC_BAR_TOL))
    closed = apply_fec(res.initial_molds, fu, fl)
    rep = compute_deviations(simulate_forming(closed, case.target, case.schedule, case.config), case.target)
    return {
        "X": X,
        "x_mm": fu.xs,
        "oracle_u": res.fec_upper.ys / R,
        "pred_u": fu.ys / R,
        "oracle_l": res.fec_lower.ys / R,
        "pred_l": fl.ys / R,
        "oracle_converged": res.converged,
        "fraction_within": float(np.mean(within)),
        "closed_loop_max_um": rep.max_surface_um,
        "closed_loop_inner_um": rep.max_inner_um,
        "closed_loop_outer_um": rep.max_outer_um,
    }


def cmd_validate(args, manifest: RunManifest) -> int:
    case = _load_case(args, manifest)
    up, lo = _load_models(args, manifest)
    out = _out_dir(args)
    v = validate_case(case, up, lo, args.tol_um)
    path = out / "comparison.csv"
    _write_csv(
        path,
        ["x_mm", "X", "fec_u_bar_oracle", "fec_u_bar_pred", "fec_l_bar_oracle", "fec_l_bar_pred"],
        (v["x_mm"], v["X"], v["oracle_u"], v["pred_u"], v["oracle_l"], v["pred_l"]),
    )
    summary = {k: v[k] for k in ("oracle_converged", "fraction_within", "closed_loop_max_um",
                                 "closed_loop_inner_um", "closed_loop_outer_um")}
    summary.update(edge_x=EDGE_X, fec_bar_tolerance=FEC_BAR_TOL)
    spath = out / "validation.json"
    spath.write_text(json.dumps(summary, indent=2))
    manifest.outputs += [str(path), str(spath)]
    print(
        f"{v['fraction_within']:.1%} of interior points within {FEC_BAR_TOL:g} FEC_bar; "
        f"closed-loop max deviation {v['closed_loop_max_um']:.3f} um"
    )
    return EXIT_OK if v["oracle_converged"] else EXIT_NOT_CONVERGED


# ---- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out", default="out")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="glassform", description="Thermoforming mold design and compensation tools.")
    p.add_argument("--version", action="version", version=f"glassform {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    mat = sub.add_parser("materials", help="material catalog")
    mat_sub = mat.add_subparsers(dest="action", required=True, parser_class=_Parser)
    ml = mat_sub.add_parser("list", parents=[common])
    ml.add_argument("--catalog", help="JSON catalog overlay")
    ml.set_defaults(func=cmd_materials)

    def case_cmd(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_)
        sp.add_argument("case", help="case JSON file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="forming config override")
        sp.set_defaults(func=func)
        return sp

    case_cmd("simulate", cmd_simulate, "forward simulation with uncompensated molds")
    d = case_cmd("design", cmd_design, "compensation loop to precision molds")
    d.add_argument("--tol-um", type=float, default=2.0)
    d.add_argument("--max-iters", type=int, default=10)
    t = case_cmd("tolerance-study", cmd_tolerance, "machining-error amplification study")
    t.add_argument("--tols", default="10,20,30")
    t.add_argument("--trials", type=int, default=20)
    t.add_argument("--corr-mm", type=float, default=2.0)

    ds = sub.add_parser("dataset", help="training data")
    ds_sub = ds.add_subparsers(dest="action", required=True, parser_class=_Parser)
    g = ds_sub.add_parser("gen", parents=[common])
    g.add_argument("--space", help="design-space JSON")
    g.add_argument("--cases", type=int, default=40)
    g.add_argument("--rows-per-case", type=int, default=0)
    g.add_argument("--tol-um", type=float, default=DATASET_TOLERANCE_UM)
    g.add_argument("--set", action="append", metavar="KEY=VALUE")
    g.set_defaults(func=cmd_dataset_gen, out="data.csv")

    tr = sub.add_parser("train", parents=[common], help="train the upper/lower networks")
    tr.add_argument("--data", required=True)
    tr.add_argument("--split", type=float, default=0.7)
    tr.add_argument("--max-epochs", type=int, default=TrainConfig.max_epochs)
    tr.add_argument("--patience", type=int, default=TrainConfig.early_stop_patience)
    tr.set_defaults(func=cmd_train, out="models")

    pr = case_cmd("predict", cmd_predict, "predict compensation with trained networks")
    pr.add_argument("--models", required=True)
    va = case_cmd("validate", cmd_validate, "compare predicted and loop-computed compensation")
    va.add_argument("--models", required=True)
    va.add_argument("--tol-um", type=float, default=DATASET_TOLERANCE_UM)
    return p


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    command = " ".join(x for x in (args.command, getattr(args, "action", None)) if x)
    manifest = RunManifest(command, argv)
    try:
        code = args.func(args, manifest)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (GlassformError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    if manifest.outputs and command not in ("materials list",):
        out_dir = Path(manifest.outputs[0]).parent
        manifest.write(out_dir)
    return code


if __name__ == "__main__":
    sys.exit(main())
