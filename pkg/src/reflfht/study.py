"""Replicated simulation study: parameter recovery and model-selection rates.

Each replicate simulates one dataset from the reference model of
``truth_kind``, fits every requested frailty kind and scores them by DIC and
LPML.  Replicate results are cached as JSON files keyed by a hash of the
study configuration, so an interrupted study resumes where it stopped.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .inference import ChainConfig, PriorSpec, run_chain, summarize
from .likelihood import PackedData
from .model_selection import SelectionConfig, StabilityWarning, evaluate_criteria
from .recurrent_model import KINDS, reference_model, simulate_dataset

__all__ = ["StudyConfig", "aggregate", "derive_seed", "recovery_table", "run_replicate",
           "run_study", "selection_table"]

# seed roles inside a replicate
SIMULATE, SELECT = 0, 1
FIT_BASE = 10


def derive_seed(master: int, replicate: int, role: int) -> int:
    """Integer seed for one role of one replicate, derived from the master seed."""
    ss = np.random.SeedSequence(entropy=master, spawn_key=(replicate, role))
    return int(ss.generate_state(1, np.uint32)[0])


@dataclass(frozen=True)
class StudyConfig:
    n_replicates: int = 20
    n_subjects: int = 200
    truth_kind: str = "correlated"
    fit_kinds: tuple[str, ...] = KINDS
    master_seed: int = 2024
    chain: ChainConfig = field(default_factory=lambda: ChainConfig(iterations=12_000, burn_in=2_000, thin=20))
    selection: SelectionConfig = field(default_factory=lambda: SelectionConfig(M=500, max_draws=200))
    prior: PriorSpec = field(default_factory=PriorSpec)
    x0: float = 10.0
    nu: float = 3.9

    def __post_init__(self):
        if self.truth_kind not in KINDS or any(k not in KINDS for k in self.fit_kinds):
            raise ValueError("unknown frailty kind")
        if self.n_replicates < 1 or self.n_subjects < 1:
            raise ValueError("need at least one replicate and one subject")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fit_kinds"] = list(self.fit_kinds)
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _truth_values(kind, x0, nu) -> dict:
    mp = reference_model(kind, x0, nu)
    out = {f"alpha{j}": float(a) for j, a in enumerate(mp.alpha)}
    out.update({f"beta{j}": float(b) for j, b in enumerate(mp.beta)})
    if kind != "independent":
        out["gamma"] = mp.frailty.gamma
    out["theta1"] = mp.frailty.theta1
    if kind != "shared":
        out["theta2p"] = mp.frailty.theta2p
    return out


def run_replicate(cfg: StudyConfig, r: int) -> dict:
    """Simulate, fit and score one replicate; returns a JSON-ready record."""
    sim_seed = derive_seed(cfg.master_seed, r, SIMULATE)
    truth = reference_model(cfg.truth_kind, cfg.x0, cfg.nu)
    study = simulate_dataset(truth, cfg.n_subjects, seed=sim_seed)
    packed = PackedData(study.dataset)
    sel = SelectionConfig(M=cfg.selection.M, seed=derive_seed(cfg.master_seed, r, SELECT),
                          max_draws=cfg.selection.max_draws, weight_warn=cfg.selection.weight_warn)
    record = {"replicate": r, "seeds": {"simulate": sim_seed, "select": sel.seed}, "fits": {},
              "n_events": int(sum(s.n_events for s in study.dataset))}
    for kind in cfg.fit_kinds:
        chain = ChainConfig(**{**asdict(cfg.chain),
                               "seed": derive_seed(cfg.master_seed, r, FIT_BASE + KINDS.index(kind))})
        t0 = time.perf_counter()
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", StabilityWarning)
            draws = run_chain(study.dataset, kind, cfg.prior, chain, cfg.x0, cfg.nu)
            crit = evaluate_criteria(draws, packed, sel)
        record["fits"][kind] = {
            "chain_seed": chain.seed,
            "summary": summarize(draws),
            "acceptance": draws.acceptance,
            "criteria": crit.to_dict(),
            "seconds": time.perf_counter() - t0,
        }
    return record


def run_study(cfg: StudyConfig, out_dir=None, progress=None, workers: int = 1) -> list[dict]:
    """Run (or resume) all replicates.

    Cached records in ``out_dir`` are reused when their configuration hash
    matches.  With ``workers > 1`` missing replicates run in separate
    processes; results do not depend on the number of workers.
    """
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    key = cfg.config_hash()
    records: dict[int, dict] = {}
    for r in range(cfg.n_replicates):
        path = out / f"replicate_{r:03d}.json" if out is not None else None
        if path is not None and path.exists():
            cached = json.loads(path.read_text())
            if cached.get("config_hash") == key:
                records[r] = cached
    todo = [r for r in range(cfg.n_replicates) if r not in records]

    def finish(r, rec):
        rec["config_hash"] = key
        if out is not None:
            path = out / f"replicate_{r:03d}.json"
            tmp = path.with_suffix(".tmp")
            tmp.write_text(json.dumps(rec, indent=1, default=_json_default))
            tmp.replace(path)
        records[r] = json.loads(json.dumps(rec, default=_json_default))
        if progress is not None:
            progress(r, records[r])

    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {pool.submit(run_replicate, cfg, r): r for r in todo}
            for fut in as_completed(futures):
                finish(futures[fut], fut.result())
    else:
        for r in todo:
            finish(r, run_replicate(cfg, r))
    return [records[r] for r in range(cfg.n_replicates)]


def _json_default(x):
    if isinstance(x, np.generic):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(type(x))


def recovery_table(records: list[dict], kind: str, truth: dict) -> list[dict]:
    """Bias, SD of posterior means, mean posterior SD (ESD) and HPD coverage."""
    rows = []
    for name, true in truth.items():
        means = np.array([rec["fits"][kind]["summary"][name]["mean"] for rec in records])
        sds = np.array([rec["fits"][kind]["summary"][name]["sd"] for rec in records])
        lo = np.array([rec["fits"][kind]["summary"][name]["hpd_lower"] for rec in records])
        hi = np.array([rec["fits"][kind]["summary"][name]["hpd_upper"] for rec in records])
        rows.append({
            "parameter": name, "true": true,
            "Bias": float(np.mean(means - true)),
            "SD": float(np.std(means, ddof=1)) if means.size > 1 else float("nan"),
            "ESD": float(np.mean(sds)),
            "CR": float(np.mean((lo <= true) & (true <= hi))),
            "mean_abs_bias": float(np.mean(np.abs(means - true))),
        })
    return rows


def selection_table(records: list[dict]) -> dict:
    """Fraction of replicates in which each fitted kind is preferred."""
    kinds = list(records[0]["fits"])
    dic_wins = dict.fromkeys(kinds, 0)
    lpml_wins = dict.fromkeys(kinds, 0)
    for rec in records:
        fits = rec["fits"]
        dic_wins[min(kinds, key=lambda k: fits[k]["criteria"]["DIC"])] += 1
        lpml_wins[max(kinds, key=lambda k: fits[k]["criteria"]["LPML"])] += 1
    n = len(records)
    return {"n_replicates": n,
            "DIC": {k: v / n for k, v in dic_wins.items()},
            "LPML": {k: v / n for k, v in lpml_wins.items()},
            "DIC_wins": dic_wins, "LPML_wins": lpml_wins}


def aggregate(cfg: StudyConfig, records: list[dict]) -> dict:
    truth = _truth_values(cfg.truth_kind, cfg.x0, cfg.nu)
    out = {"config_hash": cfg.config_hash(), "truth_kind": cfg.truth_kind,
           "n_replicates": len(records), "selection": selection_table(records)}
    if cfg.truth_kind in cfg.fit_kinds:
        out["recovery"] = recovery_table(records, cfg.truth_kind, truth)
    return out
