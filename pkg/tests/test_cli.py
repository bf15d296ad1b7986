import csv
import json

import pytest

from glassform.case import reference_case, save_case
from glassform.cli import main
from glassform.surrogate import ExtrapolationWarning


def _header(path):
    with open(path) as fh:
        return next(csv.reader(fh))


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.name != "run_manifest.json"}


@pytest.fixture(scope="module")
def case_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("case") / "ref.json"
    save_case(reference_case(), path)
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipeline")
    data = d / "data.csv"
    assert main(["dataset", "gen", "--cases", "12", "--rows-per-case", "10", "--seed", "2", "--out", str(data)]) == 0
    models = d / "models"
    assert main(["train", "--data", str(data), "--seed", "1", "--max-epochs", "60", "--out", str(models)]) == 0
    return d, data, models


def test_materials_list(capsys):
    assert main(["materials", "list"]) == 0
    out = capsys.readouterr().out
    assert "GG" in out and "BK7" in out and "graphite" in out and "glassy_carbon" in out


def test_simulate(tmp_path, case_file, capsys):
    assert main(["simulate", str(case_file), "--out", str(tmp_path)]) == 0
    assert _header(tmp_path / "deviations.csv") == ["x_mm", "dev_inner_um", "dev_outer_um", "dev_thickness_um"]
    assert "inner 38.517" in capsys.readouterr().out
    man = json.loads((tmp_path / "run_manifest.json").read_text())
    assert man["command"] == "simulate" and str(tmp_path / "deviations.csv") in man["outputs"]
    assert man["config_sources"][0] == "built-in defaults"


def test_design_converges_and_is_deterministic(tmp_path, case_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["design", str(case_file), "--tol-um", "2", "--out", str(a)]) == 0
    assert main(["design", str(case_file), "--tol-um", "2", "--out", str(b)]) == 0
    assert _files(a) == _files(b)
    hist = json.loads((a / "history.json").read_text())
    last = hist["history"][-1]
    assert hist["converged"] and max(last["max_inner_um"], last["max_outer_um"]) < 2.0
    assert _header(a / "precision_molds.csv") == ["x_mm", "y_upper_mm", "y_lower_mm"]
    assert _header(a / "fec.csv") == ["x_mm", "fec_upper_mm", "fec_lower_mm"]


def test_design_not_converged_exit_2(tmp_path, case_file):
    assert main(["design", str(case_file), "--tol-um", "1e-6", "--max-iters", "1", "--out", str(tmp_path)]) == 2
    assert (tmp_path / "history.json").exists()


def test_set_flag_overrides_case(tmp_path, case_file, capsys):
    assert main(["simulate", str(case_file), "--set", "springback_beta=1.5", "--out", str(tmp_path)]) == 0
    assert "inner 38.517" not in capsys.readouterr().out
    man = json.loads((tmp_path / "run_manifest.json").read_text())
    assert man["config_sources"][-1] == "command-line --set"


def test_env_config_below_case_file(tmp_path, monkeypatch, capsys):
    # the case file carries its own forming block, which wins over the environment
    case = json.loads(json.dumps(reference_case().to_dict()))
    del case["forming"]
    path = tmp_path / "c.json"
    path.write_text(json.dumps(case))
    env = tmp_path / "env.json"
    env.write_text(json.dumps({"springback_beta": 0.0, "springback_gamma": 0.0}))
    monkeypatch.setenv("GLASSFORM_CONFIG", str(env))
    assert main(["simulate", str(path), "--out", str(tmp_path / "o")]) == 0
    no_springback = capsys.readouterr().out
    case["forming"] = {"springback_beta": 3.0, "springback_gamma": 3.0}
    path.write_text(json.dumps(case))
    assert main(["simulate", str(path), "--out", str(tmp_path / "p")]) == 0
    assert "inner 38.517" in capsys.readouterr().out
    assert "inner 38.517" not in no_springback


def test_missing_case_exit_1(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["simulate", str(missing), "--out", str(tmp_path)]) == 1
    assert str(missing) in capsys.readouterr().err


def test_invalid_case_exit_1(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"name": "x"}')
    assert main(["simulate", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text("{not json")
    assert main(["simulate", str(bad), "--out", str(tmp_path)]) == 1


def test_usage_errors_exit_64(case_file, capsys):
    assert main(["simulate", str(case_file), "--bogus"]) == 64
    assert main(["frobnicate"]) == 64
    assert main([]) == 64
    assert main(["simulate", str(case_file), "--set", "novalue"]) == 64
    assert "usage" in capsys.readouterr().err


def test_tolerance_study(tmp_path, case_file):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["tolerance-study", str(case_file), "--tols", "10,20", "--trials", "4", "--seed", "3"]
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--jobs", "2", "--out", str(b)]) == 0
    assert _files(a) == _files(b)
    assert ",".join(_header(a / "trials.csv")) == (
        "tolerance_um,trial,max_dev_inner_um,max_dev_outer_um,peak_ratio,global_ratio,correlation"
    )
    doc = json.loads((a / "amplification.json").read_text())
    assert [lvl["tolerance_um"] for lvl in doc["levels"]] == [10.0, 20.0]


def test_dataset_gen_deterministic(tmp_path, trained):
    _, data, _ = trained
    again = tmp_path / "data.csv"
    assert main(["dataset", "gen", "--cases", "12", "--rows-per-case", "10", "--seed", "2", "--jobs", "2",
                 "--out", str(again)]) == 0
    assert again.read_bytes() == data.read_bytes()
    assert _header(data)[0] == "case_id" and len(data.read_text().splitlines()) == 121
    man = json.loads(data.with_suffix(".manifest.json").read_text())
    assert man["seed"] == 2 and man["design_space"]["rows_per_case"] == 10


def test_dataset_gen_space_file(tmp_path):
    space = tmp_path / "space.json"
    space.write_text(json.dumps({"r_max_mm": [30, 40]}))
    assert main(["dataset", "gen", "--space", str(space), "--cases", "2", "--out", str(tmp_path / "d.csv")]) == 1


def test_train_outputs_and_determinism(tmp_path, trained):
    _, data, models = trained
    again = tmp_path / "m"
    assert main(["train", "--data", str(data), "--seed", "1", "--max-epochs", "60", "--out", str(again)]) == 0
    assert _files(again) == _files(models)
    rep = json.loads((models / "train_report.json").read_text())
    assert len(rep["train_cases"]) == 8 and len(rep["test_cases"]) == 4
    assert set(rep["surfaces"]) == {"upper", "lower"}
    assert _header(models / "predictions.csv")[:2] == ["case_id", "split"]


def test_predict_and_validate(tmp_path, case_file, trained):
    _, _, models = trained
    # the reference part is deeper than the default design space
    with pytest.warns(ExtrapolationWarning, match="K_bar"):
        assert main(["predict", str(case_file), "--models", str(models), "--out", str(tmp_path / "p")]) == 0
    assert _header(tmp_path / "p" / "fec_predicted.csv") == ["x_mm", "fec_upper_mm", "fec_lower_mm"]
    a, b = tmp_path / "a", tmp_path / "b"
    with pytest.warns(ExtrapolationWarning):
        assert main(["validate", str(case_file), "--models", str(models), "--out", str(a)]) == 0
        assert main(["validate", str(case_file), "--models", str(models), "--out", str(b)]) == 0
    assert _files(a) == _files(b)
    v = json.loads((a / "validation.json").read_text())
    assert 0.0 <= v["fraction_within"] <= 1.0 and v["edge_x"] == 0.95
    assert _header(a / "comparison.csv")[0] == "x_mm"


def test_predict_bad_models(tmp_path, case_file, trained):
    _, _, models = trained
    swapped = tmp_path / "swapped"
    swapped.mkdir()
    (swapped / "upper.json").write_bytes((models / "lower.json").read_bytes())
    (swapped / "lower.json").write_bytes((models / "lower.json").read_bytes())
    assert main(["predict", str(case_file), "--models", str(swapped), "--out", str(tmp_path / "o")]) == 1
    assert main(["predict", str(case_file), "--models", str(tmp_path / "none"), "--out", str(tmp_path / "o")]) == 1


def test_train_missing_data(tmp_path):
    assert main(["train", "--data", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == 1
