"""Compiled series kernels for the reflected Brownian motion hitting time.

Every distribution in the family depends on time only through
``s = b * t`` with ``b = sigma**2 * pi**2 / (8 * (kappa - nu)**2)`` and on the
starting point only through ``phi = pi * (kappa - x0) / (2 * (kappa - nu))``.
With ``k = 2n - 1`` the rates are ``lambda_n = b * k**2`` and the weights are
``c_n = (-1)**(n + 1) * 4 / (k * pi) * cos(k * phi)``.

The kernels below evaluate the sums with the leading factor ``exp(-s)``
pulled out ("scaled" sums), which keeps the right tail free of underflow.
Truncation stops at the first ``n`` where a rigorous envelope of the
remaining terms, built from ``|c_n| <= 4 / (k * pi)``, drops below ``eps``.
Because ``exp(-s) <= 1`` the scaled rule also bounds the absolute error.

Each kernel returns ``(value, bound, n_terms)``; ``bound`` is the scaled tail
envelope at the stopping point and is ``inf`` when ``n_max`` was exhausted.

For ``s < S_SMALL`` the eigenfunction sums converge slowly (about
``sqrt(log(1/eps) / s)`` terms), so the kernels switch to the dual
method-of-images expansion.  With ``u = (x0 - nu) / (kappa - nu)`` and
``c = pi / (4 sqrt(s))``,

    F(t) = sum_{n >= 0} (-1)**n [erfc((2n + u) c) + erfc((2n + 2 - u) c)],

whose bracketed pairs decrease in ``n``, so the first omitted pair bounds
the truncation error.  Below ``S_SMALL`` a few pairs suffice and values far
under ``eps`` keep their relative accuracy; above it ``F`` and ``f`` are
never small enough for the eigenfunction sums to lose them.
"""

import math

import numpy as np
from numba import njit

FOUR_OVER_PI = 4.0 / math.pi
LOG_FLOOR_DEFAULT = math.log(1e-300)


@njit(cache=True)
def _weight(n, phi):
    k = 2.0 * n - 1.0
    sign = 1.0 if n % 2 == 1 else -1.0
    return sign * FOUR_OVER_PI / k * math.cos(k * phi)


@njit(cache=True)
def _surv_tail(k_next, s):
    # sum over odd k >= k_next of 4/(k pi) exp(-(k^2 - 1) s)
    if s <= 0.0:
        return np.inf
    denom = -math.expm1(-4.0 * s * k_next)
    return FOUR_OVER_PI / k_next * math.exp(-(k_next * k_next - 1.0) * s) / denom


@njit(cache=True)
def _dens_tail(k_next, s):
    # sum over odd k >= k_next of (4/pi) k exp(-(k^2 - 1) s); term ratio decreases in k
    if s <= 0.0:
        return np.inf
    first = FOUR_OVER_PI * k_next * math.exp(-(k_next * k_next - 1.0) * s)
    r = (k_next + 2.0) / k_next * math.exp(-4.0 * (k_next + 1.0) * s)
    if r >= 1.0:
        return np.inf
    return first / (1.0 - r)


RESEED = 64
S_SMALL = 0.1
INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


@njit(cache=True)
def _image_pair(mode, n, u, c):
    a = (2.0 * n + u) * c
    b = (2.0 * n + 2.0 - u) * c
    if mode == 0:
        return math.erfc(a) + math.erfc(b)
    # d/dt of erfc(x c(t)) with c ~ t^(-1/2), without the 1/t factor
    return INV_SQRT_PI * (a * math.exp(-a * a) + b * math.exp(-b * b))


@njit(cache=True)
def _images_sum(mode, s, phi, eps, n_max):
    """Small-time sums: F(t) for mode 0, t * f(t) for mode 1."""
    if s <= 0.0:
        return 0.0, 0.0, 0
    u = 1.0 - 2.0 * phi / math.pi
    c = math.pi / (4.0 * math.sqrt(s))
    total = 0.0
    pair = _image_pair(mode, 0, u, c)
    for n in range(n_max):
        sign = 1.0 if n % 2 == 0 else -1.0
        total += sign * pair
        pair = _image_pair(mode, n + 1, u, c)
        # pairs shrink like exp(-4 n c^2), so running to full double
        # precision costs at most a pair or two beyond the eps cut
        if pair < eps and pair <= 1e-17 * abs(total):
            return total, pair, n + 1
    return total, np.inf, n_max


@njit(cache=True)
def cdf_small(s, phi, eps, n_max):
    """F(t) at small ``s`` by the images expansion."""
    v, bd, n = _images_sum(0, s, phi, eps, n_max)
    return max(v, 0.0), bd, n


@njit(cache=True)
def dens_small(s, phi, b, eps, n_max):
    """f(t) at small ``s``; the sum is t * f(t), so the bound scales by b / s."""
    v, bd, n = _images_sum(1, s, phi, eps * s / b, n_max)
    return max(v, 0.0) * b / s, bd * b / s, n


@njit(cache=True)
def _scaled_sum(mode, s, s_width, phi, b, eps, n_max):
    """Shared loop for the survival (0), density (1) and band (2) sums.

    Weights use the Chebyshev recurrence for cos(k phi) and the exponentials
    use ratio recurrences; both are re-seeded from direct evaluation every
    ``RESEED`` terms to keep rounding from accumulating.
    """
    total = 0.0
    two_cos = 2.0 * math.cos(2.0 * phi)
    q_s = math.exp(-8.0 * s)
    q_w = math.exp(-8.0 * s_width)
    cos_prev = math.cos(phi)  # cos(-phi)
    cos_k = cos_prev
    e_k = 1.0  # exp(-(k^2 - 1) s) at k = 1
    r_k = q_s  # e_{k+2} / e_k
    a_k = math.exp(-s_width)  # exp(-k^2 s_width)
    ra_k = math.exp(-8.0 * s_width)
    for n in range(1, n_max + 1):
        k = 2.0 * n - 1.0
        if n % RESEED == 0:
            cos_k = math.cos(k * phi)
            cos_prev = math.cos((k - 2.0) * phi)
            e_k = math.exp(-(k * k - 1.0) * s)
            r_k = math.exp(-4.0 * (k + 1.0) * s)
            a_k = math.exp(-k * k * s_width)
            ra_k = math.exp(-4.0 * (k + 1.0) * s_width)
        sign = 1.0 if n % 2 == 1 else -1.0
        w = sign * FOUR_OVER_PI / k * cos_k
        if mode == 0:
            total += w * e_k
        elif mode == 1:
            total += w * k * k * e_k
        else:
            if n == 1:
                total += w * e_k * -math.expm1(-s_width)
            else:
                total += w * e_k * (1.0 - a_k)
        # advance to k + 2
        e_next = e_k * r_k
        kn = k + 2.0
        if mode == 1:
            lead = b * FOUR_OVER_PI * kn * e_next
        else:
            lead = FOUR_OVER_PI / kn * e_next
        if lead < eps:
            if mode == 1:
                bound = b * _dens_tail(kn, s)
            else:
                bound = _surv_tail(kn, s)
            if bound < eps:
                if mode == 1:
                    return b * total, bound, n
                return total, bound, n
        cos_next = two_cos * cos_k - cos_prev
        cos_prev = cos_k
        cos_k = cos_next
        e_k = e_next
        r_k = r_k * q_s
        a_k = a_k * ra_k
        ra_k = ra_k * q_w
    if mode == 1:
        return b * total, np.inf, n_max
    return total, np.inf, n_max


@njit(cache=True)
def surv_scaled(s, phi, eps, n_max):
    """exp(s) * S(t): sum of c_n exp(-(k^2 - 1) s)."""
    if s < S_SMALL:
        v, bd, n = cdf_small(s, phi, eps, n_max)
        g = math.exp(s)
        return g * (1.0 - v), g * bd, n
    return _scaled_sum(0, s, 0.0, phi, 1.0, eps, n_max)


@njit(cache=True)
def dens_scaled(s, phi, b, eps, n_max):
    """exp(s) * f(t): b * sum of c_n k^2 exp(-(k^2 - 1) s)."""
    if s < S_SMALL:
        v, bd, n = dens_small(s, phi, b, eps, n_max)
        g = math.exp(s)
        return g * v, g * bd, n
    return _scaled_sum(1, s, 0.0, phi, b, eps, n_max)


@njit(cache=True)
def cdf_direct(s, phi, eps, n_max):
    """F(t) without the ``1 - S`` cancellation at small ``s``."""
    if s < S_SMALL:
        return cdf_small(s, phi, eps, n_max)
    v, bd, n = _scaled_sum(0, s, 0.0, phi, 1.0, eps, n_max)
    g = math.exp(-s)
    return 1.0 - g * v, g * bd, n


@njit(cache=True)
def band_scaled(s_lo, s_width, phi, eps, n_max):
    """exp(s_lo) * (S(t_lo) - S(t_lo + width)), summed term by term.

    Each term is c_n exp(-(k^2 - 1) s_lo) * (1 - exp(-k^2 s_width)); the second
    factor is at most one, so the survival envelope at ``s_lo`` applies.
    Requires ``s_lo > 0`` for absolute convergence.  Below ``S_SMALL`` the
    band is the difference of two directly evaluated distribution values.
    """
    if s_lo < S_SMALL:
        f_lo, bd_lo, n_lo = cdf_small(s_lo, phi, eps, n_max)
        f_hi, bd_hi, n_hi = cdf_direct(s_lo + s_width, phi, eps, n_max)
        g = math.exp(s_lo)
        return g * (f_hi - f_lo), g * (bd_lo + bd_hi), max(n_lo, n_hi)
    return _scaled_sum(2, s_lo, s_width, phi, 1.0, eps, n_max)


@njit(cache=True)
def mean_sum(phi, b, eps, n_max):
    """Mean hitting time sum of c_n / lambda_n; ``eps`` is relative here."""
    total = 0.0
    bound = np.inf
    for n in range(1, n_max + 1):
        k = 2.0 * n - 1.0
        total += _weight(n, phi) / (k * k)
        kn = k + 2.0
        bound = FOUR_OVER_PI * (1.0 / kn ** 3 + 1.0 / (4.0 * kn * kn))
        if bound < eps * abs(total):
            return total / b, bound / b, n
    return total / b, np.inf, n_max


# ---------------------------------------------------------------------------
# vectorised evaluation for the public distribution functions
# ---------------------------------------------------------------------------

@njit(cache=True)
def eval_many(kind, t, b, phi, eps, n_max):
    """Evaluate one of pdf (0), survival (1), cdf (2) on an array of times.

    Returns unscaled values, absolute error bounds and term counts.
    """
    m = t.shape[0]
    vals = np.empty(m)
    bounds = np.empty(m)
    nterms = np.zeros(m, dtype=np.int64)
    for i in range(m):
        ti = t[i]
        if ti <= 0.0:
            bounds[i] = 0.0
            if kind == 0:
                vals[i] = 0.0
            elif kind == 1:
                vals[i] = 1.0
            else:
                vals[i] = 0.0
            continue
        s = b * ti
        scale = math.exp(-s)
        if kind == 0:
            v, bd, n = dens_scaled(s, phi, b, eps, n_max)
            v = v * scale
        elif kind == 2:
            v, bd, n = cdf_direct(s, phi, eps, n_max)
            scale = 1.0
        else:
            v, bd, n = surv_scaled(s, phi, eps, n_max)
            v = v * scale
        vals[i] = v
        bounds[i] = bd * scale
        nterms[i] = n
    return vals, bounds, nterms


@njit(cache=True)
def log_pdf_many(t, b, phi, eps, n_max):
    m = t.shape[0]
    out = np.empty(m)
    bounds = np.empty(m)
    for i in range(m):
        ti = t[i]
        if ti <= 0.0:
            out[i] = -np.inf
            bounds[i] = 0.0
            continue
        s = b * ti
        v, bd, n = dens_scaled(s, phi, b, eps, n_max)
        bounds[i] = bd
        if v > 0.0:
            out[i] = math.log(v) - s
        else:
            out[i] = -np.inf
    return out, bounds


# ---------------------------------------------------------------------------
# interval-censored gap-time contributions
# ---------------------------------------------------------------------------

@njit(cache=True)
def log_gap_contrib(t, event, b, phi, eps, n_max, log_floor):
    """Log-likelihood contribution of one gap recorded in whole days.

    Events contribute log(F(t + 1/2) - F(max(t - 1/2, 0))); censored gaps
    contribute log(S(t + 1/2)).  Returns ``(value, converged)``.
    """
    if event:
        if t <= 0.0:
            p, bd, n = cdf_direct(0.5 * b, phi, eps, n_max)
            ok = bd < eps
            if p > 0.0:
                return max(math.log(p), log_floor), ok
            return log_floor, ok
        s_lo = b * (t - 0.5)
        v, bd, n = band_scaled(s_lo, b, phi, eps, n_max)
        ok = bd < eps
        if v > 0.0:
            return max(math.log(v) - s_lo, log_floor), ok
        return log_floor, ok
    s = b * (t + 0.5)
    v, bd, n = surv_scaled(s, phi, eps, n_max)
    ok = bd < eps
    if v > 0.0:
        return max(math.log(v) - s, log_floor), ok
    return log_floor, ok


@njit(cache=True)
def subject_logliks(gaps, events, offsets, b, phi, eps, n_max, log_floor, out):
    """Per-subject conditional log-likelihoods for packed gap arrays.

    ``offsets`` has length n_subjects + 1; subject i owns
    ``gaps[offsets[i]:offsets[i + 1]]``.  Returns the index of the first gap
    whose series failed to converge, or -1.
    """
    bad = -1
    for i in range(offsets.shape[0] - 1):
        acc = 0.0
        bi = b[i]
        pi_ = phi[i]
        for j in range(offsets[i], offsets[i + 1]):
            v, ok = log_gap_contrib(gaps[j], events[j], bi, pi_, eps, n_max, log_floor)
            if not ok and bad < 0:
                bad = j
            acc += v
        out[i] = acc
    return bad


@njit(cache=True)
def single_subject_loglik_grid(gaps, events, b, phi, eps, n_max, log_floor, out):
    """Conditional log-likelihood of one subject at many (b, phi) pairs."""
    bad = -1
    for m in range(b.shape[0]):
        acc = 0.0
        for j in range(gaps.shape[0]):
            v, ok = log_gap_contrib(gaps[j], events[j], b[m], phi[m], eps, n_max, log_floor)
            if not ok and bad < 0:
                bad = m
            acc += v
        out[m] = acc
    return bad
