"""Conditional and frailty-integrated log-likelihoods of interval-censored gaps.

Gap times are recorded in whole days.  An observed gap ``t`` contributes
``F(t + 1/2) - F(max(t - 1/2, 0))`` and the final censored gap contributes
``1 - F(t + 1/2)``.  Probabilities are floored at ``prob_floor`` before
taking logs so that wild MCMC proposals are rejected rather than fatal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import logsumexp

from . import _series
from .fht_dist import DEFAULT_CONTROL, ConvergenceError, FhtParams, SeriesControl
from .recurrent_model import Dataset, ModelParams, SubjectData, link_params
from .sampler import _as_generator

__all__ = [
    "LikelihoodControl",
    "MCEstimate",
    "PackedData",
    "dataset_cond_loglik",
    "fht_arrays",
    "frailty_draws",
    "mc_loglik_matrix",
    "observed_loglik_mc",
    "subject_cond_loglik",
]


@dataclass(frozen=True)
class LikelihoodControl:
    series: SeriesControl = field(default_factory=SeriesControl)
    prob_floor: float = 1e-300
    mc_size: int = 500

    def __post_init__(self):
        if self.mc_size < 1:
            raise ValueError("Monte Carlo size must be at least 1")
        if not 0 < self.prob_floor < 1:
            raise ValueError("probability floor must lie in (0, 1)")

    @property
    def log_floor(self) -> float:
        return math.log(self.prob_floor)


DEFAULT_LIKELIHOOD = LikelihoodControl()


def fht_arrays(gap_kappa, sigma, x0, nu):
    """Series parameters ``(b, phi)`` from ``kappa - x0`` and ``sigma`` arrays."""
    span = gap_kappa + (x0 - nu)
    b = sigma ** 2 * (np.pi ** 2 / 8.0) / span ** 2
    phi = (np.pi / 2.0) * gap_kappa / span
    return b, phi


def subject_cond_loglik(subj: SubjectData, fht: FhtParams,
                        ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD) -> float:
    """Log-likelihood of one subject's gaps given its hitting-time parameters."""
    out = np.empty(1)
    bad = _series.single_subject_loglik_grid(
        subj.gaps, subj.events, np.array([fht.rate_scale]), np.array([fht.phase]),
        ctrl.series.eps, ctrl.series.n_max, ctrl.log_floor, out,
    )
    if bad >= 0:
        raise ConvergenceError(f"series for subject {subj.id} did not converge")
    return float(out[0])


class PackedData:
    """Dataset flattened for vectorised likelihood sweeps."""

    def __init__(self, dataset: Dataset):
        self.dataset = dataset
        self.gaps, self.events, self.offsets, self.X = dataset.packed()
        self.n = len(dataset)
        self.p = dataset.p

    def subject_logliks(self, alpha, beta, gamma, z1, z2p, x0, nu,
                        ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD, strict: bool = False):
        """Vector of per-subject conditional log-likelihoods.

        Entries are ``-inf`` where the parameters overflow or a series fails
        to converge; with ``strict`` those cases raise instead.
        """
        eta_s = self.X @ beta + z1
        eta_k = self.X @ alpha + gamma * z1 + z2p
        out = np.empty(self.n)
        with np.errstate(over="ignore", invalid="ignore"):
            sigma = np.exp(eta_s)
            gap_kappa = np.exp(eta_k)
            b, phi = fht_arrays(gap_kappa, sigma, x0, nu)
        finite = np.isfinite(b) & (b > 0) & np.isfinite(gap_kappa)
        if not np.all(finite):
            if strict:
                raise ConvergenceError("linear predictor overflow")
            b = np.where(finite, b, 1.0)
            phi = np.where(finite, phi, 0.0)
        bad = _series.subject_logliks(self.gaps, self.events, self.offsets, b, phi,
                                      ctrl.series.eps, ctrl.series.n_max, ctrl.log_floor, out)
        if bad >= 0:
            if strict:
                raise ConvergenceError(f"series did not converge at packed gap {bad}")
            sid = np.searchsorted(self.offsets, bad, side="right") - 1
            out[sid] = -np.inf
        out[~finite] = -np.inf
        return out


def dataset_cond_loglik(dataset: Dataset, mp: ModelParams, z1, z2p,
                        ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD) -> float:
    """Sum of conditional log-likelihoods over subjects, in subject order."""
    if len(dataset) == 0:
        return 0.0
    total = 0.0
    for subj, a, c in zip(dataset, np.broadcast_to(z1, len(dataset)),
                          np.broadcast_to(z2p, len(dataset))):
        fht = link_params(subj.covariates, mp, float(a), float(c))
        total += subject_cond_loglik(subj, fht, ctrl)
    return total


@dataclass(frozen=True)
class MCEstimate:
    value: float
    se: float
    max_weight: float


def _jackknife_logmeanexp(logw):
    m = logw.shape[-1]
    lse = logsumexp(logw, axis=-1)
    est = lse - math.log(m)
    if m < 2:
        return est, np.zeros_like(est)
    # leave-one-out log means: log(sum - w_j) - log(m - 1)
    ratio = np.exp(logw - lse[..., None])
    loo = lse[..., None] + np.log1p(-np.minimum(ratio, 1.0 - 1e-16)) - math.log(m - 1)
    se = np.sqrt((m - 1) / m * np.sum((loo - loo.mean(axis=-1, keepdims=True)) ** 2, axis=-1))
    return est, se


def frailty_draws(spec, normals):
    """Scale standard normals of shape (..., 2) into ``(z1, z2p)``."""
    z1 = math.sqrt(spec.theta1) * normals[..., 0]
    if spec.kind == "shared":
        z2p = np.zeros_like(z1)
    else:
        z2p = math.sqrt(spec.theta2p) * normals[..., 1]
    return z1, z2p


def observed_loglik_mc(subj: SubjectData, mp: ModelParams,
                       ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD, rng=None,
                       normals=None, full: bool = False):
    """Frailty-integrated log-likelihood of one subject by plain Monte Carlo.

    Averages the conditional likelihood over ``ctrl.mc_size`` frailty draws
    (or over supplied standard ``normals`` of shape (M, 2)) in log space.
    With ``full`` an :class:`MCEstimate` with a jackknife standard error and
    the largest normalised weight is returned.
    """
    if normals is None:
        normals = _as_generator(rng).standard_normal((ctrl.mc_size, 2))
    z1, z2p = frailty_draws(mp.frailty, np.asarray(normals, dtype=float))
    x = subj.covariates
    with np.errstate(over="ignore"):
        sigma = np.exp(x @ mp.beta + z1)
        gap_kappa = np.exp(x @ mp.alpha + mp.frailty.gamma * z1 + z2p)
    b, phi = fht_arrays(gap_kappa, sigma, mp.x0, mp.nu)
    out = np.empty(b.shape[0])
    bad = _series.single_subject_loglik_grid(subj.gaps, subj.events, b, phi,
                                             ctrl.series.eps, ctrl.series.n_max,
                                             ctrl.log_floor, out)
    if bad >= 0:
        raise ConvergenceError(f"series for subject {subj.id} did not converge at draw {bad}")
    est, se = _jackknife_logmeanexp(out)
    if not full:
        return float(est)
    w = np.exp(out - logsumexp(out))
    return MCEstimate(float(est), float(se), float(w.max()))


@njit(cache=True)
def _mc_grid(gaps, events, offsets, b, phi, eps, n_max, log_floor, out):
    # out[i, m] = conditional log-likelihood of subject i under frailty draw m
    bad = -1
    for i in range(offsets.shape[0] - 1):
        for m in range(b.shape[1]):
            acc = 0.0
            for j in range(offsets[i], offsets[i + 1]):
                v, ok = _series.log_gap_contrib(gaps[j], events[j], b[i, m], phi[i, m],
                                                eps, n_max, log_floor)
                if not ok and bad < 0:
                    bad = i
                acc += v
            out[i, m] = acc
    return bad


def mc_loglik_matrix(packed: PackedData, mp: ModelParams, normals,
                     ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD):
    """Conditional log-likelihoods for every subject and frailty draw.

    ``normals`` has shape (n, M, 2) and is shared across parameter values
    (common random numbers).
    """
    z1, z2p = frailty_draws(mp.frailty, normals)
    X = packed.X
    with np.errstate(over="ignore"):
        sigma = np.exp((X @ mp.beta)[:, None] + z1)
        gap_kappa = np.exp((X @ mp.alpha)[:, None] + mp.frailty.gamma * z1 + z2p)
    b, phi = fht_arrays(gap_kappa, sigma, mp.x0, mp.nu)
    if not (np.all(np.isfinite(b)) and np.all(b > 0)):
        raise ConvergenceError("linear predictor overflow in Monte Carlo frailty integration")
    out = np.empty(b.shape)
    bad = _mc_grid(packed.gaps, packed.events, packed.offsets, np.ascontiguousarray(b),
                   np.ascontiguousarray(phi), ctrl.series.eps, ctrl.series.n_max,
                   ctrl.log_floor, out)
    if bad >= 0:
        raise ConvergenceError(f"series for subject {bad} did not converge")
    return out
