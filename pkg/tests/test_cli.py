import csv
import json

import numpy as np
import pytest
from scipy import stats

from reflfht import cli
from reflfht.data_io import read_dataset, read_draws
from reflfht.fht_dist import FhtParams, cdf, pdf, survival

# short chains on 25 subjects leave harmonic-mean CPOs unstable by design
pytestmark = pytest.mark.filterwarnings("ignore::reflfht.model_selection.StabilityWarning")

BASELINE_ARGS = ["--x0", "10", "--nu", "3.9", "--kappa", "25", "--sigma", "3"]


def _run(argv, capsys=None):
    code = cli.main(argv)
    if capsys is not None:
        return code, capsys.readouterr()
    return code, None


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_dist_table_matches_module(tmp_path, capsys):
    out = tmp_path / "dist.csv"
    summary = tmp_path / "dist.json"
    code, _ = _run(["dist", *BASELINE_ARGS, "--grid", "0:400:1", "--out", str(out),
                    "--summary", str(summary)], capsys)
    assert code == 0
    rows = _read_csv(out)
    assert rows[0][:4] == ["t", "pdf", "cdf", "survival"]
    body = np.array(rows[1:], dtype=float)
    assert body.shape[0] == 401
    assert np.all(np.diff(body[:, 2]) >= 0)
    p = FhtParams(10, 3.9, 25, 3)
    t = body[:, 0]
    np.testing.assert_array_equal(body[:, 1], pdf(p, t))
    np.testing.assert_array_equal(body[:, 2], cdf(p, t))
    np.testing.assert_array_equal(body[:, 3], survival(p, t))
    doc = json.loads(summary.read_text())
    assert {"mode", "mean", "quantiles", "metadata"} <= set(doc)


def test_sample_is_reproducible_and_exact(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    rep = tmp_path / "rep.json"
    for path in (a, b):
        code, _ = _run(["sample", *BASELINE_ARGS, "--n", "100000", "--seed", "7", "--out", str(path),
                        "--report", str(rep)], capsys)
        assert code == 0
    assert a.read_bytes() == b.read_bytes()
    draws = np.loadtxt(a, delimiter=",", skiprows=1)
    assert draws.size == 100_000
    assert stats.kstest(draws, lambda t: cdf(FhtParams(10, 3.9, 25, 3), t)).statistic < 0.006
    report = json.loads(rep.read_text())
    assert report["acceptance_rate"] > 0.1 and "metadata" in report


@pytest.mark.parametrize("argv", [
    ["dist", "--x0", "3", "--nu", "3.9", "--kappa", "25", "--sigma", "3"],
    ["dist", *BASELINE_ARGS, "--grid", "0:10"],
    ["fit", "--kind", "shared", "--out", "x.csv"],
    ["select", "--data", "missing.csv", "--draws", "nothing.csv"],
])
def test_configuration_errors_exit_with_code_2(argv, capsys):
    code, io = _run(argv, capsys)
    assert code == cli.EXIT_CONFIG
    assert "error" in io.err


def test_unknown_config_key_rejected(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"iterations": 10, "bogus": 1}}))
    code, io = _run(["fit", "--config", str(cfg), "--empty", "--out", str(tmp_path / "d.csv")],
                    capsys)
    assert code == cli.EXIT_CONFIG and "bogus" in io.err
    cfg.write_text(json.dumps({"modle": {}}))
    code, _ = _run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "s.csv")], capsys)
    assert code == cli.EXIT_CONFIG


def test_numeric_error_exit_code(capsys):
    code, io = _run(["sample", *BASELINE_ARGS, "--q", "0.01", "--n", "5"], capsys)
    assert code == cli.EXIT_NUMERIC and "numerical" in io.err


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    d = tmp_path_factory.mktemp("pipe")
    cfg = d / "config.json"
    cfg.write_text(json.dumps({
        "model": {"kind": "correlated", "n_subjects": 25, "seed": 5},
        "chain": {"iterations": 300, "burn_in": 100, "thin": 10, "seed": 3},
        "selection": {"M": 20, "seed": 1},
    }))
    data = d / "data.csv"
    assert cli.main(["simulate", "--config", str(cfg), "--out", str(data)]) == 0
    draws = {}
    for kind in ("correlated", "independent", "shared"):
        draws[kind] = d / f"{kind}.csv"
        assert cli.main(["fit", "--config", str(cfg), "--data", str(data), "--kind", kind,
                         "--out", str(draws[kind])]) == 0
    crit = d / "criteria.json"
    assert cli.main(["select", "--config", str(cfg), "--data", str(data), "--out", str(crit),
                     "--draws", *(str(p) for p in draws.values())]) == 0
    return {"dir": d, "cfg": cfg, "data": data, "draws": draws, "criteria": crit}


def test_simulate_outputs(pipeline, tmp_path):
    rows = _read_csv(pipeline["data"])
    assert rows[0] == ["subject_id", "gap_days", "event", "insulin", "bmi"]
    ds = read_dataset(pipeline["data"])
    assert len(ds) == 25
    truth = json.loads(pipeline["data"].with_suffix(".truth.json").read_text())
    assert {"metadata", "frailties", "event_summary", "alpha", "beta"} <= set(truth)
    assert truth["metadata"]["config_hash"] and truth["metadata"]["seeds"]
    again = tmp_path / "again.csv"
    assert cli.main(["simulate", "--config", str(pipeline["cfg"]), "--out", str(again)]) == 0
    assert again.read_bytes() == pipeline["data"].read_bytes()


def test_fit_outputs_follow_results_table_layout(pipeline):
    path = pipeline["draws"]["correlated"]
    summary = json.loads(path.with_suffix(".summary.json").read_text())
    assert summary["K"] == 20
    for row in summary["table"]:
        assert {"parameter", "Mean", "SD", "95% CI", "ESS", "Geweke"} <= set(row)
        lo, hi = row["95% CI"]
        assert lo <= hi
    assert set(summary["derived_frailty_summary"]) == {"theta2", "rho"}
    assert "metadata" in summary and summary["sampler_settings"]["thin"] == 10
    draws = read_draws(path)
    assert draws.K == 20 and draws.kind == "correlated"


def test_fit_is_reproducible(pipeline, tmp_path):
    out = tmp_path / "again.csv"
    assert cli.main(["fit", "--config", str(pipeline["cfg"]), "--data", str(pipeline["data"]),
                     "--kind", "correlated", "--out", str(out)]) == 0
    assert out.read_bytes() == pipeline["draws"]["correlated"].read_bytes()


def test_select_comparison_table(pipeline):
    doc = json.loads(pipeline["criteria"].read_text())
    assert len(doc["comparison"]) == 3
    assert sorted(r["DIC_rank"] for r in doc["comparison"]) == [1, 2, 3]
    for model in doc["models"].values():
        assert {"DIC", "p_D", "mean_dev", "dev_at_mean", "LPML", "per_subject_CPO", "M",
                "seed"} <= set(model)
    cpo = _read_csv(doc["models"]["correlated"]["per_subject_CPO"])
    assert len(cpo) == 26


def test_select_single_model(pipeline, capsys):
    code, io = _run(["select", "--config", str(pipeline["cfg"]), "--data", str(pipeline["data"]),
                     "--draws", str(pipeline["draws"]["shared"])], capsys)
    assert code == 0
    doc = json.loads(io.out)
    assert len(doc["comparison"]) == 1 and doc["best_by_DIC"] == "shared"


def test_select_missing_draws_file(pipeline, capsys):
    code, io = _run(["select", "--data", str(pipeline["data"]), "--draws", "nope.csv"], capsys)
    assert code == cli.EXIT_CONFIG and "nope.csv" in io.err


def test_prior_only_fit(tmp_path, capsys):
    out = tmp_path / "prior.csv"
    code, _ = _run(["fit", "--empty", "--kind", "correlated", "--iterations", "20000",
                    "--burn-in", "2000", "--thin", "2", "--out", str(out)], capsys)
    assert code == 0
    gamma = read_draws(out).column("gamma")
    assert abs(gamma.mean()) < 1.5
    assert 70 < gamma.var() < 130


def test_strict_mode_turns_warnings_into_exit_code(tmp_path, pipeline, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"chain": {"iterations": 5, "burn_in": 0, "thin": 1,
                                         "step_coef": 1e4, "centering_moves": False}}))
    argv = ["fit", "--config", str(cfg), "--data", str(pipeline["data"]), "--kind",
            "independent", "--out", str(tmp_path / "d.csv")]
    with pytest.warns(Warning):
        code, _ = _run(argv, capsys)
    assert code == 0
    code, io = _run(["--strict", *argv], capsys)
    assert code == cli.EXIT_STRICT and "strict" in io.err


def test_study_command_is_resumable(tmp_path, capsys):
    cfg = tmp_path / "study.json"
    cfg.write_text(json.dumps({"study": {
        "n_replicates": 2, "n_subjects": 12, "master_seed": 7,
        "chain": {"iterations": 120, "burn_in": 20, "thin": 10},
        "selection": {"M": 10, "max_draws": 5}}}))
    out = tmp_path / "study"
    code, _ = _run(["study", "--config", str(cfg), "--out-dir", str(out)], capsys)
    assert code == 0
    header = _read_csv(out / "recovery.csv")[0]
    assert header == ["parameter", "true", "Bias", "SD", "ESD", "CR"]
    reps = _read_csv(out / "replicates.csv")
    assert len({r[0] for r in reps[1:]}) == 2
    study = json.loads((out / "study.json").read_text())
    assert study["metadata"]["seeds"]["master"] == 7
    first = sorted((out / "replicates").glob("replicate_*.json"))
    assert len(first) == 2
    stamp = [p.stat().st_mtime_ns for p in first]
    code, _ = _run(["study", "--config", str(cfg), "--out-dir", str(out)], capsys)
    assert code == 0
    assert [p.stat().st_mtime_ns for p in first] == stamp
