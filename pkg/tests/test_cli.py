import json
import subprocess
import sys

import pytest

from conftest import write_rows
from effcompute.cli import main


def run(argv, capsys):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.fixture(scope="module")
def synth_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "s.csv"
    assert main(["synth", str(path), "--n", "120", "--seed", "3", "-o", str(path.with_suffix(".json"))]) == 0
    return path


def test_validate_counts_and_diagnostics(tmp_path, capsys):
    good = ["m", "p", "2019-01-01", "WT103", 20.0, None, 1e8, 1e9, None, None, 0, None, None]
    bad = ["bad", "p", "2019-01-01", "WT103", 20.0, None, -1, 1e9, None, None, 0, None, None]
    code, out, _ = run(["validate", write_rows(tmp_path / "a.csv", [good, bad])], capsys)
    report = json.loads(out)
    assert code == 0
    assert report["counts"]["valid"] == 1 and len(report["diagnostics"]) == 1


def test_validate_empty_and_missing(tmp_path, capsys):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert run(["validate", empty], capsys)[0] == 2
    assert run(["validate", tmp_path / "missing.csv"], capsys)[0] == 2
    header_only = write_rows(tmp_path / "h.csv", [])
    assert run(["validate", header_only], capsys)[0] == 2


def test_synth_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["synth", a, "--n", "30", "--seed", "4"], capsys)
    run(["synth", b, "--n", "30", "--seed", "4"], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_fit_bootstrap_one_collapses(synth_csv, capsys):
    code, out, _ = run(["fit", synth_csv, "--bootstrap", "1", "--starts", "2"], capsys)
    report = json.loads(out)
    assert code == 0
    assert report["seed"] == 0 and len(report["input"]["sha256"]) == 64
    q = report["doubling_times"]["quantiles"]["t_d"]
    assert q[0] == q[1] == q[2]
    assert report["doubling_times"]["unit"] == "months"
    assert set(report["fit"]["theta"]) >= {"alpha_const", "beta_data"}


def test_fit_reports_are_byte_identical(synth_csv, tmp_path, capsys):
    outs = []
    for threads in ("1", "2"):
        path = tmp_path / f"r{threads}.json"
        run(["fit", synth_csv, "--bootstrap", "3", "--starts", "1", "--seed", "7", "--threads", threads, "-o", path], capsys)
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_fit_text_rendering(synth_csv, capsys):
    code, out, _ = run(["fit", synth_csv, "--starts", "1", "--text"], capsys)
    assert code == 0
    assert "Parameter" in out and "alpha_param" in out and "Doubling time (months)" in out


def test_fit_failure_exit_code(tmp_path, capsys):
    rows = [[f"m{i}", "p", "2019-01-01", "WT103", 20.0 + i, None, 1e8 * (i + 1), 1e9, None, None, 0, None, None] for i in range(4)]
    code, out, err = run(["fit", write_rows(tmp_path / "few.csv", rows)], capsys)
    assert code == 3
    assert "underdetermined" in err
    assert json.loads(out)["error"]


def test_cluster_reports_rho(tmp_path, capsys):
    path = tmp_path / "c.csv"
    run(["synth", path, "--n", "300", "--papers", "20", "--rho", "0.45", "--seed", "1"], capsys)
    code, out, _ = run(["fit", path, "--cluster", "--starts", "1"], capsys)
    theta = json.loads(out)["fit"]["theta"]
    assert code == 0 and abs(theta["rho"] - 0.45) < 0.15


def test_loocv_single_cell(synth_csv, capsys):
    code, out, _ = run(["loocv", synth_csv, "--grid", "custom", "--models", "7", "--kfold", "4", "--starts", "1"], capsys)
    report = json.loads(out)
    assert code == 0
    assert len(report["loocv"]["cells"]) == 1 and report["loocv"]["scheme"] == "4-fold"


def test_analyze_gain_and_chinchilla(tmp_path, capsys):
    code, out, _ = run(["analyze", "--gain", "0", "--t-c", "8.4"], capsys)
    assert code == 0 and json.loads(out)["gain"]["effective_compute_multiplier"] == 1.0
    laws = {"kaplan": {"E": 1.69, "A": 406.4, "B": 410.7, "alpha": 0.34, "beta": 0.28, "kind": "additive"}}
    (tmp_path / "laws.json").write_text(json.dumps(laws))
    code, out, _ = run(["analyze", "--ceg-chinchilla", "1e22", "--laws", tmp_path / "laws.json"], capsys)
    assert code == 0 and json.loads(out)["ceg_chinchilla"]["ceg"] == 1.0


def test_analyze_shapley_only_n(tmp_path, synth_csv, capsys):
    lines = synth_csv.read_text().splitlines()
    first = lines[1].split(",")
    twin = list(first)
    twin[0] = "twin"
    twin[6] = repr(float(first[6]) * 50)  # params
    path = tmp_path / "pair.csv"
    path.write_text("\n".join(lines + [",".join(twin)]) + "\n")
    code, out, _ = run(["analyze", path, "--shapley", f"old={first[0]}", "new=twin", "--starts", "1"], capsys)
    shares = json.loads(out)["shapley"]["shares"]
    assert code == 0
    assert shares["parameter_scaling"] == pytest.approx(1.0)
    assert shares["data_scaling"] == shares["parameter_efficiency"] == shares["data_efficiency"] == 0.0


def test_analyze_errors(synth_csv, capsys):
    assert run(["analyze"], capsys)[0] == 2
    assert run(["analyze", "--cutoff", "2017"], capsys)[0] == 2
    code, _, err = run(["analyze", synth_csv, "--cutoff", "2012.1", "--starts", "1"], capsys)
    assert code == 4 and "need 15" in err


def test_module_entry_point(synth_csv):
    proc = subprocess.run([sys.executable, "-m", "effcompute", "validate", str(synth_csv)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["counts"]["valid"] == 120
