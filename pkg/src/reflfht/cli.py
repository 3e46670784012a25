"""Command-line front end.

Subcommands::

    reflfht dist      distribution table and summary scalars
    reflfht sample    exact draws from the hitting-time law
    reflfht simulate  recurrent gap-time dataset plus truth sidecar
    reflfht fit       posterior draws and summary for one frailty kind
    reflfht select    DIC / LPML comparison of fitted models
    reflfht study     replicated simulation study

Settings come from an optional JSON config with sections ``model``,
``priors``, ``chain``, ``selection``, ``study`` and ``io``; command-line
flags override it.  Every command writes a metadata block with the package
version, a hash of the effective configuration and all seeds.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 convergence or stability warning under ``--strict``.  ``REFLFHT_THREADS``
sets the default number of worker processes for ``study``.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import __version__
from .data_io import metadata, read_dataset, read_draws, write_dataset, write_draws, write_json
from .fht_dist import (ConvergenceError, FhtParams, MultimodalityWarning, ParameterError, cdf,
                       mean, mode, pdf, quantile, survival)
from .inference import ChainConfig, ConvergenceWarning, PriorSpec, run_chain, summarize
from .model_selection import SelectionConfig, StabilityWarning, compare, evaluate_criteria
from .recurrent_model import (KINDS, CovariateConfig, Dataset, FollowupConfig, FrailtySpec,
                              ModelParams, derived_frailty_summary, reference_model,
                              simulate_dataset)
from .sampler import EnvelopeError, ProposalError, RngStream, build_proposal, sample_many

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_STRICT = 0, 2, 3, 4
THREADS_ENV = "REFLFHT_THREADS"


class ConfigError(ValueError):
    pass


def _defaults() -> dict:
    return {
        "model": {
            "kind": "correlated", "x0": 10.0, "nu": 3.9, "n_subjects": 200, "seed": 0,
            "alpha": None, "beta": None, "gamma": None, "theta1": None, "theta2p": None,
            "q": 0.95, "copula_corr": 0.4,
            "followup": {"kind": "uniform", "low": 42, "high": 294, "constant": 168.0,
                         "values_file": None},
        },
        "priors": asdict(PriorSpec()),
        "chain": asdict(ChainConfig()),
        "selection": asdict(SelectionConfig()),
        "study": {"n_replicates": 20, "n_subjects": 200, "truth_kind": "correlated",
                  "fit_kinds": list(KINDS), "master_seed": 2024, "workers": None,
                  "chain": {"iterations": 12_000, "burn_in": 2_000, "thin": 20},
                  "selection": {"M": 500, "max_draws": 200}},
        "io": {"data": None, "out": None, "summary": None, "draws": [], "out_dir": None,
               "empty": False, "p": 3},
    }


_OPEN_KEYS = {("study", "chain"), ("study", "selection")}


def _merge(base: dict, update: dict, path=()):
    for key, val in update.items():
        where = ".".join(path + (key,))
        if key not in base and path not in _OPEN_KEYS:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base.get(key), dict) and path + (key,) not in _OPEN_KEYS:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _merge(base[key], val, path + (key,))
        else:
            base[key] = val


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file, then flag overrides; unknown keys are errors."""
    cfg = _defaults()
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            user = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: {exc}") from None
        if not isinstance(user, dict):
            raise ConfigError("config must be a JSON object")
        _merge(cfg, user)
    for dotted, val in (overrides or {}).items():
        if val is None:
            continue
        section, key = dotted.split(".", 1)
        _merge(cfg, {section: {key: val}})
    return cfg


def _build(cls, values: dict, section: str):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown {section} keys: {sorted(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {section} settings: {exc}") from None


def model_from_config(m: dict) -> ModelParams:
    kind = m["kind"]
    if kind not in KINDS:
        raise ConfigError(f"model.kind must be one of {KINDS}")
    ref = reference_model(kind, m["x0"], m["nu"])
    alpha = np.asarray(m["alpha"] if m["alpha"] is not None else ref.alpha, dtype=float)
    beta = np.asarray(m["beta"] if m["beta"] is not None else ref.beta, dtype=float)
    get = lambda key, default: default if m[key] is None else float(m[key])  # noqa: E731
    try:
        spec = FrailtySpec(kind, get("theta1", ref.frailty.theta1),
                           get("theta2p", ref.frailty.theta2p), get("gamma", ref.frailty.gamma))
        return ModelParams(alpha, beta, spec, float(m["x0"]), float(m["nu"]))
    except ValueError as exc:
        raise ConfigError(f"invalid model: {exc}") from None


def _followup(m: dict) -> FollowupConfig:
    fu = dict(m["followup"])
    values_file = fu.pop("values_file", None)
    unknown = set(fu) - {"kind", "low", "high", "constant"}
    if unknown:
        raise ConfigError(f"unknown model.followup keys: {sorted(unknown)}")
    if values_file is not None:
        if not Path(values_file).exists():
            raise ConfigError(f"follow-up values file not found: {values_file}")
        return FollowupConfig.from_file(values_file)
    try:
        return FollowupConfig(**fu)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _write_csv(path, header, rows):
    fh = sys.stdout if path in (None, "-") else open(path, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if fh is not sys.stdout:
            fh.close()


def _emit_json(obj, path):
    text = write_json(obj, None if path in (None, "-") else path)
    if path in (None, "-"):
        sys.stdout.write(text)


def _report(obj):
    sys.stderr.write(write_json(obj))


def _parse_grid(spec: str) -> np.ndarray:
    try:
        lo, hi, step = (float(v) for v in spec.split(":"))
    except ValueError:
        raise ConfigError("grid must look like start:stop:step") from None
    if step <= 0 or hi < lo:
        raise ConfigError("grid needs step > 0 and stop >= start")
    count = int(round((hi - lo) / step)) + 1
    return lo + step * np.arange(count)


def _fht_from_args(args) -> FhtParams:
    try:
        return FhtParams(args.x0, args.nu, args.kappa, args.sigma)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_dist(args) -> int:
    params = _fht_from_args(args)
    t = _parse_grid(args.grid)
    f, F, S = pdf(params, t), cdf(params, t), survival(params, t)
    _write_csv(args.out, ["t", "pdf", "cdf", "survival"],
               [[repr(float(a)), repr(float(b)), repr(float(c)), repr(float(d))]
                for a, b, c, d in zip(t, f, F, S)])
    m = mode(params)
    probs = (0.05, 0.25, 0.5, 0.75, 0.95)
    config = {"x0": args.x0, "nu": args.nu, "kappa": args.kappa, "sigma": args.sigma,
              "grid": args.grid}
    summary = {
        "metadata": metadata("dist", config, {}),
        "mode": m.t_mode, "density_at_mode": m.density, "multimodal": m.multimodal,
        "mean": mean(params),
        "quantiles": {str(p): quantile(params, p) for p in probs},
        "rows": int(t.size),
    }
    if args.summary:
        _emit_json(summary, args.summary)
    else:
        _report(summary)
    return EXIT_OK


def cmd_sample(args) -> int:
    params = _fht_from_args(args)
    pieces = build_proposal(params, q=args.q)
    draws, trials = sample_many(params, pieces, RngStream(args.seed, 0), args.n)
    _write_csv(args.out, ["t"], [[repr(float(v))] for v in draws])
    masses = pieces.piece_mass
    expected = [masses[i] * args.n for i in range(3)]
    config = {"x0": args.x0, "nu": args.nu, "kappa": args.kappa, "sigma": args.sigma,
              "n": args.n, "q": args.q}
    report = {
        "metadata": metadata("sample", config, {"seed": args.seed}),
        "n": args.n,
        "candidates_per_piece": trials.tolist(),
        "bounding_constants": [pieces.M1, pieces.M2, pieces.M3],
        "piece_mass": list(masses),
        "acceptance_rate": float(args.n / trials.sum()) if trials.sum() else float("nan"),
        "expected_acceptance_per_piece": [1.0 / m for m in (pieces.M1, pieces.M2, pieces.M3)],
        "expected_draws_per_piece": expected,
    }
    if args.report:
        _emit_json(report, args.report)
    else:
        _report(report)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = load_config(args.config, {"model.kind": args.kind, "model.n_subjects": args.n,
                                    "model.seed": args.seed, "io.out": args.out})
    m = cfg["model"]
    mp = model_from_config(m)
    out = cfg["io"]["out"]
    if not out:
        raise ConfigError("simulate needs an output path (--out or io.out)")
    try:
        covariates = CovariateConfig.default()
        covariates = CovariateConfig(covariates.shapes, covariates.scales,
                                     copula_corr=float(m["copula_corr"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    study = simulate_dataset(mp, int(m["n_subjects"]), covariates, _followup(m),
                             seed=int(m["seed"]), q=float(m["q"]))
    write_dataset(study.dataset, out)
    ds = study.dataset
    n_events = int(sum(s.n_events for s in ds))
    total_time = float(sum(s.gaps.sum() for s in ds))
    truth = {
        "metadata": metadata("simulate", cfg["model"], {"simulate": int(m["seed"])}),
        "kind": mp.frailty.kind, "x0": mp.x0, "nu": mp.nu,
        "alpha": mp.alpha, "beta": mp.beta, "gamma": mp.frailty.gamma,
        "theta1": mp.frailty.theta1, "theta2p": mp.frailty.theta2p,
        "derived": asdict(derived_frailty_summary(mp.frailty)),
        "covariate_names": list(ds.covariate_names),
        "frailties": {"z1": study.z1, "z2p": study.z2p},
        "follow_up_days": study.follow_ups,
        "event_summary": {
            "subjects": len(ds), "events": n_events, "gaps": int(sum(s.gaps.size for s in ds)),
            "events_per_subject": n_events / len(ds),
            "events_per_100_days": 100.0 * n_events / total_time if total_time else float("nan"),
            "zero_day_gaps": int(sum(int(np.sum((s.gaps == 0) & (s.events == 1))) for s in ds)),
        },
    }
    sidecar = Path(out).with_suffix(".truth.json")
    write_json(truth, sidecar)
    _report({"dataset": str(out), "truth": str(sidecar), **truth["event_summary"]})
    return EXIT_OK


def _chain_and_prior(cfg):
    chain = _build(ChainConfig, cfg["chain"], "chain")
    prior = _build(PriorSpec, cfg["priors"], "priors")
    return chain, prior


def summary_table(draws, summary: dict) -> list[dict]:
    """Rows with Mean, SD and 95% CI, in the layout of a published results table."""
    rows = []
    for name, s in summary.items():
        rows.append({"parameter": name, "Mean": s["mean"], "SD": s["sd"],
                     "95% CI": [s["hpd_lower"], s["hpd_upper"]],
                     "ESS": s.get("ess"), "Geweke": s.get("geweke_z")})
    return rows


def cmd_fit(args) -> int:
    cfg = load_config(args.config, {
        "model.kind": args.kind, "io.data": args.data, "io.out": args.out,
        "io.summary": args.summary, "chain.iterations": args.iterations,
        "chain.burn_in": args.burn_in, "chain.thin": args.thin, "chain.seed": args.seed,
        "io.empty": True if args.empty else None, "io.p": args.p,
    })
    m, io = cfg["model"], cfg["io"]
    if m["kind"] not in KINDS:
        raise ConfigError(f"model.kind must be one of {KINDS}")
    chain, prior = _chain_and_prior(cfg)
    if io["empty"]:
        p = int(io["p"])
        dataset = Dataset([], tuple(["intercept"] + [f"x{j}" for j in range(1, p)]))
    else:
        if not io["data"]:
            raise ConfigError("fit needs a dataset (--data or io.data) or --empty")
        dataset = _read_dataset(io["data"])
        p = dataset.p
    if not io["out"]:
        raise ConfigError("fit needs an output path for the draws (--out or io.out)")
    draws = run_chain(dataset, m["kind"], prior, chain, float(m["x0"]), float(m["nu"]), p=p)
    write_draws(draws, io["out"])
    summ = summarize(draws)
    derived = None
    if m["kind"] == "correlated":
        derived = {k: summ[k] for k in ("theta2", "rho")}
    seeds = {"chain": chain.seed}
    doc = {
        "metadata": metadata("fit", cfg, seeds),
        "kind": m["kind"], "K": draws.K, "draws_file": str(io["out"]),
        "table": summary_table(draws, {k: v for k, v in summ.items() if "ess" in v}),
        "parameters": summ,
        "derived_frailty_summary": derived,
        "acceptance": draws.acceptance,
        "sampler_settings": draws.config,
        "warnings": draws.warnings,
    }
    summary_path = io["summary"] or str(Path(io["out"]).with_suffix(".summary.json"))
    write_json(doc, summary_path)
    _report({"draws": str(io["out"]), "summary": summary_path, "acceptance": draws.acceptance})
    return EXIT_OK


def _read_dataset(path):
    try:
        return read_dataset(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from None
    except ValueError as exc:
        raise ConfigError(f"bad dataset: {exc}") from None


def cmd_select(args) -> int:
    cfg = load_config(args.config, {"io.data": args.data, "selection.M": args.M,
                                    "selection.seed": args.seed,
                                    "selection.max_draws": args.max_draws, "io.out": args.out,
                                    "io.draws": args.draws or None})
    io, m = cfg["io"], cfg["model"]
    sel = _build(SelectionConfig, cfg["selection"], "selection")
    if not io["data"]:
        raise ConfigError("select needs a dataset (--data or io.data)")
    if not io["draws"]:
        raise ConfigError("select needs at least one draws file")
    dataset = _read_dataset(io["data"])
    results, labels = {}, {}
    for item in io["draws"]:
        label, _, path = item.rpartition("=")
        path = path or item
        if not Path(path).exists():
            raise ConfigError(f"draws file not found: {path}")
        try:
            draws = read_draws(path, float(m["x0"]), float(m["nu"]), dataset.covariate_names)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if draws.p != dataset.p:
            raise ConfigError(f"{path}: draws have {draws.p} covariates, dataset has {dataset.p}")
        label = label or draws.kind
        if label in results:
            label = f"{label}:{Path(path).stem}"
        results[label] = evaluate_criteria(draws, dataset, sel)
        labels[label] = str(path)
    cpo_path = None
    if io["out"]:
        cpo_path = str(Path(io["out"]).with_suffix(".cpo.csv"))
        names = list(results)
        _write_csv(cpo_path, ["subject_id", *(f"log_cpo_{n}" for n in names)],
                   [[s.id, *(repr(float(results[n].log_cpo[i])) for n in names)]
                    for i, s in enumerate(dataset)])
    doc = {
        "metadata": metadata("select", cfg, {"selection": sel.seed}),
        "models": {k: {"draws_file": labels[k], **r.to_dict(cpo_path)} for k, r in results.items()},
        "comparison": compare(results),
        "best_by_DIC": min(results, key=lambda k: results[k].DIC),
        "best_by_LPML": max(results, key=lambda k: results[k].LPML),
    }
    _emit_json(doc, io["out"])
    return EXIT_OK


def cmd_study(args) -> int:
    from .study import StudyConfig, aggregate, run_study

    cfg = load_config(args.config, {"study.n_replicates": args.replicates,
                                    "study.n_subjects": args.n, "study.master_seed": args.seed,
                                    "study.truth_kind": args.truth_kind,
                                    "study.workers": args.workers, "io.out_dir": args.out_dir})
    st, io = cfg["study"], cfg["io"]
    if not io["out_dir"]:
        raise ConfigError("study needs an output directory (--out-dir or io.out_dir)")
    chain = _build(ChainConfig, {**asdict(ChainConfig()), **st["chain"]}, "study.chain")
    sel = _build(SelectionConfig, {**asdict(SelectionConfig()), **st["selection"]}, "study.selection")
    prior = _build(PriorSpec, cfg["priors"], "priors")
    try:
        scfg = StudyConfig(n_replicates=int(st["n_replicates"]), n_subjects=int(st["n_subjects"]),
                           truth_kind=st["truth_kind"], fit_kinds=tuple(st["fit_kinds"]),
                           master_seed=int(st["master_seed"]), chain=chain, selection=sel,
                           prior=prior, x0=float(cfg["model"]["x0"]), nu=float(cfg["model"]["nu"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    workers = st["workers"] or int(os.environ.get(THREADS_ENV, "1"))
    out = Path(io["out_dir"])
    records = run_study(scfg, out / "replicates", workers=workers,
                        progress=lambda r, rec: sys.stderr.write(f"replicate {r} done\n"))
    agg = aggregate(scfg, records)
    rows = []
    for rec in records:
        for kind, fit in rec["fits"].items():
            for name, s in fit["summary"].items():
                if "ess" not in s:
                    continue
                rows.append([rec["replicate"], kind, name, repr(s["mean"]), repr(s["sd"]),
                             repr(s["hpd_lower"]), repr(s["hpd_upper"]), repr(s["ess"]),
                             repr(fit["criteria"]["DIC"]), repr(fit["criteria"]["LPML"])])
    _write_csv(out / "replicates.csv", ["replicate", "kind", "parameter", "mean", "sd",
                                        "hpd_lower", "hpd_upper", "ess", "DIC", "LPML"], rows)
    if "recovery" in agg:
        _write_csv(out / "recovery.csv", ["parameter", "true", "Bias", "SD", "ESD", "CR"],
                   [[r["parameter"], r["true"], r["Bias"], r["SD"], r["ESD"], r["CR"]]
                    for r in agg["recovery"]])
    seeds = {"master": scfg.master_seed}
    write_json({"metadata": metadata("study", scfg.to_dict(), seeds), **agg}, out / "study.json")
    _report(agg["selection"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_fht_args(p):
    p.add_argument("--x0", type=float, default=10.0, help="starting level")
    p.add_argument("--nu", type=float, default=3.9, help="lower (absorbing) barrier")
    p.add_argument("--kappa", type=float, required=True, help="upper (reflecting) barrier")
    p.add_argument("--sigma", type=float, required=True, help="volatility")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="reflfht", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--strict", action="store_true",
                        help="treat convergence and stability warnings as errors (exit 4)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dist", help="tabulate pdf, cdf and survival on a grid")
    _add_fht_args(p)
    p.add_argument("--grid", default="0:400:1", help="start:stop:step, inclusive")
    p.add_argument("--out", default="-", help="table CSV (default stdout)")
    p.add_argument("--summary", help="summary JSON (default stderr)")
    p.set_defaults(func=cmd_dist)

    p = sub.add_parser("sample", help="exact draws by composition-rejection")
    _add_fht_args(p)
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--q", type=float, default=0.95, help="quantile splitting body from tail")
    p.add_argument("--out", default="-", help="draws CSV (default stdout)")
    p.add_argument("--report", help="acceptance report JSON (default stderr)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("simulate", help="simulate a recurrent gap-time dataset")
    p.add_argument("--config")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--n", type=int, help="number of subjects")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="dataset CSV; truth goes to <out>.truth.json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="posterior sampling for one frailty kind")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--empty", action="store_true", help="fit the prior only (no subjects)")
    p.add_argument("--p", type=int, help="number of regression coefficients with --empty")
    p.add_argument("--iterations", type=int)
    p.add_argument("--burn-in", type=int, dest="burn_in")
    p.add_argument("--thin", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="draws CSV")
    p.add_argument("--summary", help="summary JSON (default <out>.summary.json)")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("select", help="compare fitted models by DIC and LPML")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--draws", nargs="+", help="draws CSV files, optionally as label=path")
    p.add_argument("--M", type=int, help="Monte Carlo frailty draws per subject")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-draws", type=int, dest="max_draws")
    p.add_argument("--out", help="criteria JSON (default stdout)")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("study", help="replicated simulation study")
    p.add_argument("--config")
    p.add_argument("--replicates", type=int)
    p.add_argument("--n", type=int, help="subjects per replicate")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--truth-kind", choices=KINDS, dest="truth_kind")
    p.add_argument("--workers", type=int, help=f"worker processes (default ${THREADS_ENV} or 1)")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_study)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    with warnings.catch_warnings():
        if args.strict:
            for cat in (ConvergenceWarning, StabilityWarning, MultimodalityWarning):
                warnings.simplefilter("error", cat)
        try:
            return args.func(args)
        except ConfigError as exc:
            print(f"reflfht: error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (ConvergenceWarning, StabilityWarning, MultimodalityWarning) as exc:
            print(f"reflfht: strict mode: {exc}", file=sys.stderr)
            return EXIT_STRICT
        except (ConvergenceError, ProposalError, EnvelopeError, FloatingPointError,
                ParameterError) as exc:
            print(f"reflfht: numerical error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
