"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``criterion N: PASS/FAIL`` line and the lines are
repeated in the terminal summary.  Criteria 5 and 6 read the replicated
study from ``.cache/acceptance_study`` (override with the environment
variable ``REFLFHT_STUDY_DIR``); missing replicates are computed and cached,
which takes about two hours from scratch.
"""

import json
import os
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

from reflfht import cli
from reflfht.fht_dist import FhtParams, cdf, pdf, quantile, series_coeffs
from reflfht.inference import PosteriorDraws, parameter_names
from reflfht.likelihood import LikelihoodControl, observed_loglik_mc
from reflfht.model_selection import SelectionConfig, evaluate_criteria, selection_normals
from reflfht.recurrent_model import Dataset, reference_model, simulate_dataset
from reflfht.sampler import RngStream, build_proposal, sample_many
from reflfht.study import StudyConfig, aggregate, run_study

from oracles import brute_force_criteria, euler_hitting_times, gauss_hermite_loglik

BASELINE = FhtParams(x0=10.0, nu=3.9, kappa=25.0, sigma=3.0)
REF_MODEL = reference_model("correlated")
STUDY_DIR = Path(os.environ.get("REFLFHT_STUDY_DIR",
                                Path(__file__).resolve().parents[1] / ".cache" / "acceptance_study"))

# sigma and kappa - nu at the corners and centre of [0.5, 5] x [5, 80]
SAMPLER_CASES = [
    FhtParams(x0=6.4, nu=3.9, kappa=8.9, sigma=0.5),
    FhtParams(x0=8.9, nu=3.9, kappa=8.9, sigma=5.0),
    FhtParams(x0=10.0, nu=3.9, kappa=83.9, sigma=0.5),
    FhtParams(x0=43.9, nu=3.9, kappa=83.9, sigma=5.0),
    BASELINE,
]


def test_criterion_1_distribution_properties(report_criterion):
    worst_norm = worst_fd = worst_tail = 0.0
    origin_ok = True
    for p in SAMPLER_CASES:
        origin_ok &= cdf(p, 0.0) == 0.0
        t_hi = quantile(p, 1.0 - 1e-10)
        area, _ = integrate.quad(lambda t: float(pdf(p, t)), 0.0, t_hi, limit=400,
                                 epsabs=1e-11, epsrel=1e-11)
        worst_norm = max(worst_norm, abs(area - 1.0))
        t = np.linspace(quantile(p, 1e-6), quantile(p, 1.0 - 1e-6), 100)
        h = 1e-4 * t
        fd = (cdf(p, t + h) - cdf(p, t - h)) / (2 * h)
        worst_fd = max(worst_fd, float(np.max(np.abs(fd - pdf(p, t)))))
        lam, c = series_coeffs(p, 1)
        t_tail = np.array([40.0, 60.0, 100.0, 250.0]) / lam
        ratio = pdf(p, t_tail) / (c * lam * np.exp(-lam * t_tail))
        worst_tail = max(worst_tail, float(np.max(np.abs(ratio - 1.0))))
    ok = origin_ok and worst_norm <= 1e-6 and worst_fd <= 1e-6 and worst_tail <= 1e-6
    report_criterion(1, ok, f"cdf(0)=0: {origin_ok}; |area-1|={worst_norm:.1e}; "
                            f"max FD gap={worst_fd:.1e}; max |tail ratio-1|={worst_tail:.1e} "
                            "(bounds 1e-6)")
    assert ok


def test_criterion_2_euler_path_oracle(report_criterion):
    p = BASELINE
    grid = np.linspace(quantile(p, 0.01), quantile(p, 0.99), 20)
    hits = euler_hitting_times(np.random.default_rng(20240), 1_000_000, p.x0, p.nu, p.kappa,
                               p.sigma, 1e-3, grid[-1] + 1.0)
    empirical = np.searchsorted(np.sort(hits), grid, side="right") / hits.size
    gap = float(np.max(np.abs(empirical - cdf(p, grid))))
    ok = gap < 3e-3
    report_criterion(2, ok, f"max |F - F_euler| over 20 times = {gap:.2e} (bound 3e-3, 1e6 paths)")
    assert ok


def test_criterion_3_sampler_exactness(report_criterion):
    stats_ = []
    for i, p in enumerate(SAMPLER_CASES):
        draws, _ = sample_many(p, build_proposal(p), RngStream(303, i), 100_000)
        stats_.append(stats.kstest(draws, lambda t, p=p: cdf(p, t)).statistic)
    worst = max(stats_)
    ok = worst < 0.006
    report_criterion(3, ok, "KS statistics " + ", ".join(f"{d:.4f}" for d in stats_)
                     + " (bound 0.006, 1e5 draws each)")
    assert ok


def test_criterion_4_frailty_integration(report_criterion):
    sim = simulate_dataset(REF_MODEL, 400, seed=404)
    subjects = [s for s in sim.dataset if 1 <= s.gaps.size <= 4][:50]
    assert len(subjects) == 50
    ctrl = LikelihoodControl(mc_size=500)
    z = []
    for i, subj in enumerate(subjects):
        est = observed_loglik_mc(subj, REF_MODEL, ctrl, rng=RngStream(404, i), full=True)
        z.append((est.value - gauss_hermite_loglik(subj, REF_MODEL)) / est.se)
    z = np.abs(np.array(z))
    ok = bool(np.all(z < 3.0))
    report_criterion(4, ok, f"{int(np.sum(z < 3))}/50 subjects within 3 jackknife SE "
                            f"(largest |z| = {z.max():.2f})")
    assert ok


@pytest.fixture(scope="module")
def study():
    cfg = StudyConfig()
    records = run_study(cfg, STUDY_DIR)
    return cfg, records, aggregate(cfg, records)


def test_criterion_5_parameter_recovery(study, report_criterion):
    _, records, summary = study
    beta_rows = [r for r in summary["recovery"] if r["parameter"].startswith("beta")]
    biases = {r["parameter"]: r["mean_abs_bias"] for r in beta_rows}
    covered = sum(r["CR"] * len(records) for r in beta_rows)
    coverage = covered / (len(beta_rows) * len(records))
    ok = all(b <= 0.1 for b in biases.values()) and coverage >= 0.80
    report_criterion(5, ok, "mean |bias| " + ", ".join(f"{k}={v:.3f}" for k, v in biases.items())
                     + f" (bound 0.1); pooled beta HPD coverage {coverage:.2f} (bound 0.80), "
                     f"{len(records)} replicates")
    assert ok


def test_criterion_6_model_selection(study, report_criterion):
    _, records, summary = study
    dic = summary["selection"]["DIC_wins"]["correlated"]
    lpml = summary["selection"]["LPML_wins"]["correlated"]
    ok = dic >= 10 and lpml >= 9
    report_criterion(6, ok, f"correlated model best by DIC in {dic}/{len(records)} (need 10), "
                            f"by LPML in {lpml}/{len(records)} (need 9); "
                            f"DIC wins {summary['selection']['DIC_wins']}, "
                            f"LPML wins {summary['selection']['LPML_wins']}")
    assert ok


@pytest.mark.filterwarnings("ignore::reflfht.model_selection.StabilityWarning")
def test_criterion_7_brute_force_criteria(report_criterion):
    ds = Dataset(list(simulate_dataset(REF_MODEL, 2, seed=3).dataset), ("i", "a", "b"))
    rng = np.random.default_rng(1)
    truth = np.array([*REF_MODEL.alpha, *REF_MODEL.beta, -0.55, 0.2, 0.3])
    rows = truth + 0.05 * rng.standard_normal((3, truth.size))
    rows[:, -2:] = np.abs(rows[:, -2:])
    draws = PosteriorDraws(parameter_names("correlated", 3), rows, "correlated", 10.0, 3.9,
                           ("intercept", "insulin", "bmi"))
    cfg = SelectionConfig(M=4, seed=9)
    res = evaluate_criteria(draws, ds, cfg)
    ref = brute_force_criteria(draws, ds, selection_normals(cfg, 2))
    rel = {key: abs(getattr(res, key) / ref[key] - 1.0)
           for key in ("DIC", "dev_at_mean", "mean_dev", "LPML")}
    rel["CPO"] = float(np.max(np.abs(np.exp(res.log_cpo) / ref["cpo"] - 1.0)))
    ok = all(v <= 1e-10 for v in rel.values())
    report_criterion(7, ok, "relative gaps " + ", ".join(f"{k}={v:.1e}" for k, v in rel.items())
                     + " (bound 1e-10)")
    assert ok


@pytest.mark.filterwarnings("ignore::reflfht.model_selection.StabilityWarning")
def test_criterion_8_pipeline_smoke_run(tmp_path, report_criterion):
    cfg = tmp_path / "config.json"
    cfg.write_text(json.dumps({
        "model": {"kind": "correlated", "n_subjects": 60, "seed": 808},
        "chain": {"iterations": 1200, "burn_in": 200, "thin": 10, "seed": 8},
        "selection": {"M": 100, "seed": 8},
    }))
    data = tmp_path / "data.csv"
    codes = [cli.main(["simulate", "--config", str(cfg), "--out", str(data)])]
    draws = []
    for kind in ("correlated", "independent", "shared"):
        draws.append(tmp_path / f"{kind}.csv")
        codes.append(cli.main(["fit", "--config", str(cfg), "--data", str(data), "--kind", kind,
                               "--out", str(draws[-1])]))
    crit = tmp_path / "criteria.json"
    codes.append(cli.main(["select", "--config", str(cfg), "--data", str(data), "--out", str(crit),
                           "--draws", *map(str, draws)]))
    layout_ok = True
    for path in draws:
        table = json.loads(path.with_suffix(".summary.json").read_text())["table"]
        layout_ok &= all({"Mean", "SD", "95% CI"} <= set(row) for row in table)
    ranked = json.loads(crit.read_text())["comparison"]
    ok = codes == [0] * 5 and layout_ok and len(ranked) == 3
    report_criterion(8, ok, f"exit codes {codes}; summary columns Mean/SD/95% CI present: "
                            f"{layout_ok}; models ranked: {len(ranked)}")
    assert ok
