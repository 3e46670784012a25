"""DIC and LPML from posterior draws with Monte Carlo frailty integration.

Each subject gets its own fixed block of standard normal frailty draws
(common random numbers), reused for every posterior draw and for the
posterior mean, so differences between parameter values are not swamped by
integration noise.  Monte Carlo standard errors come from a per-subject
jackknife over the frailty draws.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .inference import PosteriorDraws
from .likelihood import DEFAULT_LIKELIHOOD, LikelihoodControl, PackedData, mc_loglik_matrix
from .recurrent_model import ModelParams
from .sampler import RngStream

__all__ = [
    "SelectionConfig",
    "SelectionResult",
    "StabilityWarning",
    "compare",
    "cpo_lpml",
    "deviance",
    "dic",
    "evaluate_criteria",
    "selection_normals",
    "subject_loglik_mc",
]


class StabilityWarning(RuntimeWarning):
    """A single posterior draw dominates a harmonic-mean CPO estimate."""


@dataclass(frozen=True)
class SelectionConfig:
    M: int = 500
    seed: int = 0
    max_draws: int | None = None  # evenly spaced subset of the posterior draws
    weight_warn: float = 0.5

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be at least 1")
        if self.max_draws is not None and self.max_draws < 1:
            raise ValueError("max_draws must be at least 1")


def selection_normals(cfg: SelectionConfig, n: int) -> np.ndarray:
    """Standard normals of shape (n, M, 2); subject ``i`` uses stream ``(seed, i)``."""
    out = np.empty((n, cfg.M, 2))
    for i in range(n):
        out[i] = RngStream(cfg.seed, i).generator().standard_normal((cfg.M, 2))
    return out


def _packed(dataset):
    return dataset if isinstance(dataset, PackedData) else PackedData(dataset)


def subject_loglik_mc(mp: ModelParams, dataset, cfg: SelectionConfig = SelectionConfig(),
                      normals=None, ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD):
    """Monte Carlo observed-data log-likelihood of every subject, shape (n,)."""
    packed = _packed(dataset)
    if normals is None:
        normals = selection_normals(cfg, packed.n)
    mat = mc_loglik_matrix(packed, mp, normals, ctrl)
    return logsumexp(mat, axis=1) - math.log(mat.shape[1])


def deviance(mp: ModelParams, dataset, cfg: SelectionConfig = SelectionConfig(),
             normals=None, ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD) -> float:
    """``-2 * sum_i log L_i(mp)`` with frailties integrated by Monte Carlo."""
    return float(-2.0 * np.sum(subject_loglik_mc(mp, dataset, cfg, normals, ctrl)))


def _loo(mat):
    """Per-subject MC estimates and their leave-one-frailty-draw-out versions."""
    m = mat.shape[1]
    lse = logsumexp(mat, axis=1)
    est = lse - math.log(m)
    if m < 2:
        return est, None
    ratio = np.minimum(np.exp(mat - lse[:, None]), 1.0 - 1e-16)
    loo = lse[:, None] + np.log1p(-ratio) - math.log(m - 1)
    return est, loo


def _jack_var(values):
    # values: (n, M) leave-one-out replicates per subject -> summed jackknife variance
    m = values.shape[1]
    dev = values - values.mean(axis=1, keepdims=True)
    return float(np.sum((m - 1) / m * np.sum(dev * dev, axis=1)))


@dataclass
class SelectionResult:
    DIC: float
    p_D: float
    dev_at_mean: float
    mean_dev: float
    LPML: float
    log_cpo: np.ndarray
    max_weight: np.ndarray
    DIC_se: float
    LPML_se: float
    M: int
    seed: int
    K: int
    warnings: list[str] = field(default_factory=list)

    def to_dict(self, cpo_path: str | None = None) -> dict:
        out = {
            "DIC": self.DIC, "p_D": self.p_D, "mean_dev": self.mean_dev,
            "dev_at_mean": self.dev_at_mean, "LPML": self.LPML,
            "DIC_se": self.DIC_se, "LPML_se": self.LPML_se,
            "M": self.M, "seed": self.seed, "K": self.K,
            "max_cpo_weight": float(np.max(self.max_weight)) if self.max_weight.size else 0.0,
            "warnings": list(self.warnings),
        }
        if cpo_path is not None:
            out["per_subject_CPO"] = cpo_path
        return out

    def to_json(self, cpo_path: str | None = None) -> str:
        return json.dumps(self.to_dict(cpo_path), indent=2)


def _draw_rows(draws: PosteriorDraws, max_draws):
    K = draws.K
    if K == 0:
        raise ValueError("no posterior draws")
    if max_draws is None or max_draws >= K:
        return np.arange(K)
    return np.unique(np.linspace(0, K - 1, max_draws).round().astype(int))


def evaluate_criteria(draws: PosteriorDraws, dataset, cfg: SelectionConfig = SelectionConfig(),
                      ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD) -> SelectionResult:
    """DIC, LPML and their Monte Carlo standard errors in one pass over the draws.

    The posterior mean is taken over the same draws used for the mean
    deviance.
    """
    packed = _packed(dataset)
    n = packed.n
    if n == 0:
        raise ValueError("empty dataset")
    rows = _draw_rows(draws, cfg.max_draws)
    K = rows.size
    normals = selection_normals(cfg, n)
    has_loo = cfg.M >= 2

    sum_est = np.zeros(n)
    sum_loo = np.zeros((n, cfg.M)) if has_loo else None
    neg_lse = np.full(n, -np.inf)  # running logsumexp_k of -log L_i(k)
    neg_lse_loo = np.full((n, cfg.M), -np.inf) if has_loo else None
    neg_max = np.full(n, -np.inf)
    for k in rows:
        mat = mc_loglik_matrix(packed, draws.draw(int(k)), normals, ctrl)
        est, loo = _loo(mat)
        sum_est += est
        neg_lse = np.logaddexp(neg_lse, -est)
        neg_max = np.maximum(neg_max, -est)
        if has_loo:
            sum_loo += loo
            neg_lse_loo = np.logaddexp(neg_lse_loo, -loo)

    mean_vec = draws.values[rows].mean(axis=0)
    mat_bar = mc_loglik_matrix(packed, draws.model_params(mean_vec), normals, ctrl)
    est_bar, loo_bar = _loo(mat_bar)

    mean_dev = float(-2.0 * np.sum(sum_est) / K)
    dev_at_mean = float(-2.0 * np.sum(est_bar))
    p_d = mean_dev - dev_at_mean
    dic_val = dev_at_mean + 2.0 * p_d

    log_cpo = -(neg_lse - math.log(K))
    lpml = float(np.sum(log_cpo))
    max_weight = np.exp(neg_max - neg_lse)

    if has_loo:
        # per-subject contribution to DIC = 2 * mean_dev_i - dev_at_mean_i
        dic_loo = -4.0 * sum_loo / K + 2.0 * loo_bar
        dic_se = math.sqrt(_jack_var(dic_loo))
        lpml_se = math.sqrt(_jack_var(-(neg_lse_loo - math.log(K))))
    else:
        dic_se = lpml_se = float("nan")

    notes = []
    worst = int(np.argmax(max_weight))
    # with a single draw the harmonic mean is exact, not unstable
    if K > 1 and max_weight[worst] > cfg.weight_warn:
        msg = (f"harmonic-mean CPO unstable: one draw carries {max_weight[worst]:.2f} of the "
               f"weight for subject {worst}")
        notes.append(msg)
        warnings.warn(msg, StabilityWarning, stacklevel=2)
    return SelectionResult(dic_val, p_d, dev_at_mean, mean_dev, lpml, log_cpo, max_weight,
                           dic_se, lpml_se, cfg.M, cfg.seed, K, notes)


def dic(draws: PosteriorDraws, dataset, cfg: SelectionConfig = SelectionConfig(),
        ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD):
    """``(DIC, p_D, Dev at posterior mean, mean deviance)``."""
    r = evaluate_criteria(draws, dataset, cfg, ctrl)
    return r.DIC, r.p_D, r.dev_at_mean, r.mean_dev


def cpo_lpml(draws: PosteriorDraws, dataset, cfg: SelectionConfig = SelectionConfig(),
             ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD):
    """``(per-subject CPO, LPML)``; CPO is the harmonic mean of ``L_i`` over draws."""
    r = evaluate_criteria(draws, dataset, cfg, ctrl)
    return np.exp(r.log_cpo), r.LPML


def compare(results: dict[str, SelectionResult]) -> list[dict]:
    """One row per model with DIC and LPML ranks (1 = preferred)."""
    names = list(results)
    dics = np.array([results[m].DIC for m in names])
    lpmls = np.array([results[m].LPML for m in names])
    dic_rank = np.argsort(np.argsort(dics)) + 1
    lpml_rank = np.argsort(np.argsort(-lpmls)) + 1
    rows = []
    for j, m in enumerate(names):
        r = results[m]
        rows.append({"model": m, "DIC": r.DIC, "DIC_se": r.DIC_se, "p_D": r.p_D,
                     "LPML": r.LPML, "LPML_se": r.LPML_se,
                     "DIC_rank": int(dic_rank[j]), "LPML_rank": int(lpml_rank[j])})
    return rows
