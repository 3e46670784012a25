"""Hitting time of a lower barrier by Brownian motion reflected at an upper barrier.

A driftless Brownian motion with volatility ``sigma`` starts at ``x0`` and is
reflected at ``kappa``.  The time ``tau`` at which it first reaches
``nu < x0`` has density and distribution function

    f(t) = sum_n c_n lambda_n exp(-lambda_n t),
    F(t) = 1 - sum_n c_n exp(-lambda_n t),

with ``lambda_n = (2n-1)^2 sigma^2 pi^2 / (8 (kappa - nu)^2)`` and
``c_n = (-1)^(n+1) 4 / ((2n-1) pi) cos((2n-1) pi (kappa - x0) / (2 (kappa - nu)))``.

All functions here are pure and accept scalar or array times.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize

from . import _series

__all__ = [
    "ConvergenceError",
    "FhtParams",
    "ModeResult",
    "MultimodalityWarning",
    "ParameterError",
    "SeriesControl",
    "cdf",
    "evaluate",
    "interval_prob",
    "log_pdf",
    "mean",
    "mode",
    "pdf",
    "quantile",
    "series_coeffs",
    "survival",
]


class ParameterError(ValueError):
    """Parameters outside the domain of the hitting-time family."""


class ConvergenceError(ArithmeticError):
    """Series did not reach its truncation tolerance within ``n_max`` terms."""

    def __init__(self, message, value=None, bound=None):
        super().__init__(message)
        self.value = value
        self.bound = bound


class MultimodalityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class FhtParams:
    """Starting level ``x0``, lower absorbing barrier ``nu``, upper reflecting
    barrier ``kappa`` and volatility ``sigma``."""

    x0: float
    nu: float
    kappa: float
    sigma: float

    def __post_init__(self):
        vals = (self.x0, self.nu, self.kappa, self.sigma)
        if not all(math.isfinite(v) for v in vals):
            raise ParameterError(f"non-finite parameters {vals}")
        if self.sigma <= 0:
            raise ParameterError(f"sigma must be positive, got {self.sigma}")
        if not self.nu < self.x0 <= self.kappa:
            raise ParameterError(
                f"need nu < x0 <= kappa, got nu={self.nu}, x0={self.x0}, kappa={self.kappa}"
            )

    @property
    def rate_scale(self) -> float:
        """``b`` such that ``lambda_n = b (2n-1)^2``."""
        return self.sigma ** 2 * math.pi ** 2 / (8.0 * (self.kappa - self.nu) ** 2)

    @property
    def phase(self) -> float:
        return math.pi * (self.kappa - self.x0) / (2.0 * (self.kappa - self.nu))


@dataclass(frozen=True)
class SeriesControl:
    eps: float = 1e-12
    n_max: int = 1_000_000

    def __post_init__(self):
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.n_max < 1:
            raise ValueError("n_max must be at least 1")


DEFAULT_CONTROL = SeriesControl()


def series_coeffs(params: FhtParams, n):
    """Rate ``lambda_n`` and signed weight ``c_n`` of the n-th series term."""
    n_arr = np.asarray(n)
    if np.any(n_arr < 1):
        raise ValueError("series index starts at 1")
    k = 2.0 * n_arr - 1.0
    lam = params.rate_scale * k ** 2
    sign = np.where(n_arr % 2 == 1, 1.0, -1.0)
    c = sign * 4.0 / (k * np.pi) * np.cos(k * params.phase)
    if np.ndim(n) == 0:
        return float(lam), float(c)
    return lam, c


class SeriesValue(NamedTuple):
    value: np.ndarray
    bound: np.ndarray
    n_terms: np.ndarray


_KINDS = {"pdf": 0, "survival": 1, "cdf": 2}


def evaluate(params: FhtParams, t, kind: str, ctrl: SeriesControl = DEFAULT_CONTROL) -> SeriesValue:
    """Truncated series with its absolute truncation bound and term count.

    Raises :class:`ConvergenceError` if any entry needed more than
    ``ctrl.n_max`` terms.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    vals, bounds, nterms = _series.eval_many(
        _KINDS[kind], t_arr.ravel(), params.rate_scale, params.phase, ctrl.eps, ctrl.n_max
    )
    if not np.all(np.isfinite(bounds)):
        i = int(np.flatnonzero(~np.isfinite(bounds))[0])
        raise ConvergenceError(
            f"{kind} series at t={t_arr.ravel()[i]!r} did not converge in {ctrl.n_max} terms",
            value=float(vals[i]),
            bound=float(bounds[i]),
        )
    shape = t_arr.shape
    return SeriesValue(vals.reshape(shape), bounds.reshape(shape), nterms.reshape(shape))


def _finish(values, t):
    if np.ndim(t) == 0:
        return float(values.reshape(-1)[0])
    return values


def pdf(params: FhtParams, t, ctrl: SeriesControl = DEFAULT_CONTROL):
    res = evaluate(params, t, "pdf", ctrl)
    return _finish(np.maximum(res.value, 0.0), t)


def survival(params: FhtParams, t, ctrl: SeriesControl = DEFAULT_CONTROL):
    res = evaluate(params, t, "survival", ctrl)
    return _finish(np.clip(res.value, 0.0, 1.0), t)


def cdf(params: FhtParams, t, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Distribution function; zero for ``t <= 0``."""
    res = evaluate(params, t, "cdf", ctrl)
    return _finish(np.clip(res.value, 0.0, 1.0), t)


def log_pdf(params: FhtParams, t, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Log density, stable in the far right tail.

    Returns ``-inf`` where the truncated sum is not positive.
    """
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out, bounds = _series.log_pdf_many(
        t_arr.ravel(), params.rate_scale, params.phase, ctrl.eps, ctrl.n_max
    )
    if not np.all(np.isfinite(bounds)):
        raise ConvergenceError(f"log-density series did not converge in {ctrl.n_max} terms")
    return _finish(out.reshape(t_arr.shape), t)


def interval_prob(params: FhtParams, t, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Mass of the whole-day interval around ``t``: F(t + 1/2) - F(max(t - 1/2, 0))."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0):
        raise ValueError("day counts must be nonnegative")
    b, phi = params.rate_scale, params.phase
    out = np.empty(t_arr.size)
    for i, ti in enumerate(t_arr.ravel()):
        if ti < 0.5:
            out[i] = cdf(params, ti + 0.5, ctrl)
            continue
        s_lo = b * (ti - 0.5)
        v, bd, _ = _series.band_scaled(s_lo, b, phi, ctrl.eps, ctrl.n_max)
        if not bd < ctrl.eps:
            raise ConvergenceError(f"interval series at t={ti} did not converge", value=v, bound=bd)
        out[i] = max(v * math.exp(-s_lo), 0.0)
    return _finish(out.reshape(t_arr.shape), t)


def quantile(params: FhtParams, p, ctrl: SeriesControl = DEFAULT_CONTROL):
    """Time at which the distribution function reaches ``p``.

    Bracketed root finding on F (or on S for upper quantiles, which avoids
    cancellation); the upper end of the bracket comes from the exponential
    tail and is doubled until it encloses the root; the lower end is found by
    halving.
    """
    p_arr = np.atleast_1d(np.asarray(p, dtype=float))
    if np.any((p_arr <= 0) | (p_arr >= 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    lam1, c1 = series_coeffs(params, 1)
    out = np.empty(p_arr.size)
    for i, pi in enumerate(p_arr.ravel()):
        if pi > 0.5:
            target = 1.0 - pi

            def fn(t):
                return target - survival(params, t, ctrl)
        else:

            def fn(t):
                return cdf(params, t, ctrl) - pi

        hi = 2.0 * max(math.log(c1 / (1.0 - pi)), 1.0) / lam1
        for _ in range(200):
            if fn(hi) >= 0:
                break
            hi *= 2.0
        else:
            raise ArithmeticError(f"could not bracket quantile {pi}")
        # halve downwards rather than starting at 0: very short times need
        # many series terms and are never required for a level above eps
        lo = hi
        while fn(lo) > 0:
            hi, lo = lo, 0.5 * lo
        root = optimize.brentq(fn, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=1000)
        if abs(cdf(params, root, ctrl) - pi) > 1e-10:
            raise ArithmeticError(f"quantile {pi} not resolved to 1e-10")
        out[i] = root
    return _finish(out.reshape(p_arr.shape), p)


class ModeResult(NamedTuple):
    t_mode: float
    density: float
    multimodal: bool


def mode(params: FhtParams, ctrl: SeriesControl = DEFAULT_CONTROL, n_grid: int = 512) -> ModeResult:
    """Location and height of the density peak.

    A log-spaced grid between the 1e-4 and 0.999 quantiles locates the peak,
    golden-section search refines it.  ``multimodal`` is set when the grid
    shows more than one strict local maximum.
    """
    lo, hi = quantile(params, [1e-4, 0.999], ctrl)
    grid = np.geomspace(lo, hi, n_grid)
    dens = pdf(params, grid, ctrl)
    i = int(np.argmax(dens))
    interior = (dens[1:-1] > dens[:-2]) & (dens[1:-1] > dens[2:]) & (dens[1:-1] > 1e-6 * dens[i])
    multimodal = int(np.count_nonzero(interior)) > 1
    if multimodal:
        warnings.warn("density grid shows several local maxima; using the global one",
                      MultimodalityWarning, stacklevel=2)
    a = grid[max(i - 1, 0)]
    c = grid[min(i + 1, n_grid - 1)]
    if 0 < i < n_grid - 1:
        res = optimize.minimize_scalar(
            lambda t: -pdf(params, t, ctrl), bracket=(a, grid[i], c), method="golden",
            tol=1e-8,
        )
        t_m = float(res.x)
    else:
        t_m = float(grid[i])
    return ModeResult(t_m, pdf(params, t_m, ctrl), multimodal)


def mean(params: FhtParams, ctrl: SeriesControl = DEFAULT_CONTROL) -> float:
    """Expected hitting time, sum of c_n / lambda_n.

    The tolerance is relative for this sum because its magnitude scales with
    ``1 / lambda_1``.
    """
    val, bound, _ = _series.mean_sum(params.phase, params.rate_scale, ctrl.eps, ctrl.n_max)
    if not math.isfinite(bound):
        raise ConvergenceError("mean series did not converge", value=val, bound=bound)
    return float(val)
