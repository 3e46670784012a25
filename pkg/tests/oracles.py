"""Independent reference computations used by the tests.

Nothing here calls the compiled series kernels directly: the series oracle
works in mpmath from the raw parameters, the path oracle simulates the
process itself, and the quadrature and brute-force oracles compose the
public distribution functions along a different route than the package.
"""

import math

import mpmath as mp
import numpy as np
from numba import njit
from numpy.polynomial.hermite_e import hermegauss

from reflfht import fht_dist
from reflfht.recurrent_model import link_params


# ---------------------------------------------------------------------------
# extended-precision partial sums straight from the series definition
# ---------------------------------------------------------------------------

def mp_terms(x0, nu, kappa, sigma, n_terms):
    x0, nu, kappa, sigma = (mp.mpf(v) for v in (x0, nu, kappa, sigma))
    for n in range(1, n_terms + 1):
        k = 2 * n - 1
        lam = k ** 2 * sigma ** 2 * mp.pi ** 2 / (8 * (kappa - nu) ** 2)
        c = (-1) ** (n + 1) * 4 / (k * mp.pi) * mp.cos(k * mp.pi * (kappa - x0) / (2 * (kappa - nu)))
        yield lam, c


def mp_survival(params, t, n_terms=2000, dps=40):
    with mp.workdps(dps):
        t = mp.mpf(t)
        return float(mp.fsum(c * mp.exp(-lam * t) for lam, c in
                             mp_terms(params.x0, params.nu, params.kappa, params.sigma, n_terms)))


def mp_pdf(params, t, n_terms=2000, dps=40):
    with mp.workdps(dps):
        t = mp.mpf(t)
        return float(mp.fsum(c * lam * mp.exp(-lam * t) for lam, c in
                             mp_terms(params.x0, params.nu, params.kappa, params.sigma, n_terms)))


def mp_cdf(params, t, **kw):
    with mp.workdps(kw.get("dps", 40)):
        return float(1 - mp.mpf(mp_survival(params, t, **kw)))


def mp_images_cdf(params, t, n_images=60, dps=50):
    """F(t) by reflection images in physical units, for very short times.

    Sums the signed Gaussian exits through the lower boundary from the
    start point and its mirror copies across the reflecting upper boundary.
    """
    if t <= 0:
        return mp.mpf(0)
    with mp.workdps(dps):
        L = mp.mpf(params.kappa) - params.nu
        d = mp.mpf(params.x0) - params.nu
        scale = params.sigma * mp.sqrt(2 * mp.mpf(t))
        total = mp.mpf(0)
        for n in range(n_images):
            total += (-1) ** n * (mp.erfc((2 * n * L + d) / scale)
                                  + mp.erfc((2 * (n + 1) * L - d) / scale))
        return total


def mp_images_pdf(params, t, n_images=60, dps=50):
    """Density from the images sum, differentiating each erfc term in t."""
    with mp.workdps(dps):
        L = mp.mpf(params.kappa) - params.nu
        d = mp.mpf(params.x0) - params.nu
        t = mp.mpf(t)
        var = params.sigma ** 2 * t
        # d/dt erfc(a / sqrt(2 var)) = a exp(-a^2 / (2 var)) / (t sqrt(2 pi var))
        total = mp.mpf(0)
        for n in range(n_images):
            for a in (2 * n * L + d, 2 * (n + 1) * L - d):
                total += (-1) ** n * a * mp.exp(-a * a / (2 * var)) / (t * mp.sqrt(2 * mp.pi * var))
        return total


# ---------------------------------------------------------------------------
# Euler scheme for the reflected Brownian motion
# ---------------------------------------------------------------------------

@njit(cache=True)
def euler_hitting_times(gen, n_paths, x0, nu, kappa, sigma, dt, t_max, z_safe=8.0):
    """Hitting times of ``nu`` for Euler paths reflected at ``kappa``.

    Step size ``dt``; a crossing between grid points is detected with the
    Brownian-bridge probability ``exp(-2 (x - nu)(y - nu) / (sigma^2 dt))``.
    While a path is more than ``z_safe`` block standard deviations away from
    both barriers, ``m`` Euler increments are summed into one Gaussian draw,
    which is exact in law; a missed barrier contact has probability below
    ``2 exp(-z_safe^2 / 2)``.  Paths alive at ``t_max`` get ``inf``.
    """
    out = np.empty(n_paths)
    sd = sigma * math.sqrt(dt)
    c = 2.0 / (sigma * sigma * dt)
    near = 40.0 / c
    n_steps = int(t_max / dt + 0.5)
    for i in range(n_paths):
        x = x0
        hit = np.inf
        k = 0
        while k < n_steps:
            d = min(x - nu, kappa - x)
            m = int((d / (z_safe * sd)) ** 2)
            if m > 1:
                m = min(m, n_steps - k)
                x += sd * math.sqrt(m) * gen.standard_normal()
                k += m
                continue
            k += 1
            y = x + sd * gen.standard_normal()
            if y > kappa:
                y = 2.0 * kappa - y
            if y <= nu:
                hit = k * dt
                break
            if (x - nu) * (y - nu) < near and gen.random() < math.exp(-c * (x - nu) * (y - nu)):
                hit = (k - 0.5) * dt
                break
            x = y
        out[i] = hit
    return out


# ---------------------------------------------------------------------------
# conditional likelihood via survival differences
# ---------------------------------------------------------------------------

def cond_loglik_by_survival(gaps, events, params):
    """Interval-censored log-likelihood composed from ``survival`` calls only."""
    total = 0.0
    for t, e in zip(gaps, events):
        if e:
            lo = max(t - 0.5, 0.0)
            p = fht_dist.survival(params, lo) - fht_dist.survival(params, t + 0.5)
        else:
            p = fht_dist.survival(params, t + 0.5)
        total += math.log(max(p, 1e-300))
    return total


def gauss_hermite_loglik(subj, mp_, n_nodes=32, min_weight=1e-30):
    """Frailty-integrated log-likelihood of one subject on an n x n product rule.

    Nodes whose product weight is below ``min_weight`` are dropped: they sit
    about seven standard deviations out, where the series for the extreme
    volatilities needs millions of terms, and their total weight is far below
    the double-precision resolution of the result.
    """
    u, w = hermegauss(n_nodes)
    w = w / math.sqrt(2.0 * math.pi)
    spec = mp_.frailty
    logs, logw = [], []
    for a, wa in zip(u, w):
        z1 = math.sqrt(spec.theta1) * a
        for b, wb in zip(u, w):
            if wa * wb < min_weight:
                continue
            z2p = math.sqrt(spec.theta2p) * b
            params = link_params(subj.covariates, mp_, z1, z2p)
            logs.append(cond_loglik_by_survival(subj.gaps, subj.events, params))
            logw.append(math.log(wa * wb))
    v = np.array(logs) + np.array(logw)
    m = v.max()
    return float(m + math.log(np.exp(v - m).sum()))


def brute_force_criteria(draws, dataset, normals):
    """DIC and LPML by explicit loops over draws, subjects and frailty draws."""
    K = draws.K
    n = len(dataset)
    M = normals.shape[1]

    def subj_loglik(mp_, i):
        subj = dataset[i]
        vals = []
        for m in range(M):
            z1 = math.sqrt(mp_.frailty.theta1) * normals[i, m, 0]
            z2p = (0.0 if mp_.frailty.kind == "shared"
                   else math.sqrt(mp_.frailty.theta2p) * normals[i, m, 1])
            params = link_params(subj.covariates, mp_, z1, z2p)
            vals.append(cond_loglik_by_survival(subj.gaps, subj.events, params))
        vals = np.array(vals)
        top = vals.max()
        return top + math.log(np.mean(np.exp(vals - top)))

    L = np.empty((K, n))
    for k in range(K):
        for i in range(n):
            L[k, i] = subj_loglik(draws.draw(k), i)
    mean_dev = float(np.mean(-2.0 * L.sum(axis=1)))
    bar = draws.model_params(draws.values.mean(axis=0))
    dev_bar = -2.0 * sum(subj_loglik(bar, i) for i in range(n))
    p_d = mean_dev - dev_bar
    cpo = np.array([1.0 / np.mean(np.exp(-L[:, i])) for i in range(n)])
    return {"DIC": dev_bar + 2 * p_d, "p_D": p_d, "dev_at_mean": dev_bar,
            "mean_dev": mean_dev, "LPML": float(np.sum(np.log(cpo))), "cpo": cpo}


def brute_force_hpd(x, prob=0.95):
    x = np.sort(np.asarray(x, dtype=float))
    K = x.size
    m = math.ceil(prob * K)
    best = None
    for j in range(K - m + 1):
        width = x[j + m - 1] - x[j]
        if best is None or width < best[0]:
            best = (width, x[j], x[j + m - 1])
    return best[1], best[2]
