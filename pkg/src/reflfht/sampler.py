"""Exact draws from the hitting-time density by composition-rejection.

The support is split at the mode ``t_m`` and at the ``q`` quantile ``t_q``.
A piece is picked with the target's own probabilities
``(F(t_m), q - F(t_m), 1 - q)`` and a draw is then rejection-sampled from
the density restricted to that piece, using

* a triangular proposal on ``(0, t_m]``,
* the chord from ``(t_m, f(t_m))`` to ``(t_q, f(t_q))`` on ``(t_m, t_q]``,
* an exponential tail with rate ``lambda_1`` on ``(t_q, inf)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import optimize

from . import _series
from .fht_dist import DEFAULT_CONTROL, FhtParams, SeriesControl, cdf, mode, pdf, quantile, series_coeffs

__all__ = [
    "EnvelopeError",
    "ProposalError",
    "ProposalPieces",
    "RngStream",
    "build_proposal",
    "piece_inverse_cdf",
    "sample_fht",
    "sample_many",
]

SAFETY = 1.0001
MAX_TRIALS = 1_000_000


class ProposalError(ValueError):
    """The three-piece envelope could not be constructed."""


class EnvelopeError(RuntimeError):
    """Too many rejections in one piece; the bounding constant is wrong."""


@dataclass(frozen=True)
class RngStream:
    """Named, reproducible random stream: the same ``(seed, stream)`` pair
    always yields the same sequence."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        """Derive an independent stream from extra integer keys."""
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream, *keys))
        return RngStream(int(ss.generate_state(2, np.uint64).view(np.int64)[0] & (2**63 - 1)), 0)


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator()
    return np.random.default_rng(rng)


@dataclass(frozen=True)
class ProposalPieces:
    t_m: float
    f_tm: float
    t_q: float
    f_tq: float
    q: float
    q_tm: float
    k1: float
    k2: float
    lambda1: float
    c1: float
    M1: float
    M2: float
    M3: float
    # series parameters of the target, used by the compiled sampler
    b: float
    phi: float
    eps: float
    n_max: int

    @property
    def body_area(self) -> float:
        return 0.5 * (self.t_q - self.t_m) * (self.f_tm + self.f_tq)

    @property
    def piece_mass(self) -> tuple[float, float, float]:
        return self.q_tm, self.q - self.q_tm, 1.0 - self.q

    def proposal_density(self, piece: int, t):
        """Normalised proposal density of one piece."""
        t = np.asarray(t, dtype=float)
        if piece == 1:
            inside = (t > 0) & (t <= self.t_m)
            return np.where(inside, 2.0 * t / self.t_m ** 2, 0.0)
        if piece == 2:
            inside = (t > self.t_m) & (t <= self.t_q)
            chord = self.f_tm + self.k2 * (t - self.t_m)
            return np.where(inside, chord / self.body_area, 0.0)
        if piece == 3:
            inside = t > self.t_q
            return np.where(inside, self.lambda1 * np.exp(-self.lambda1 * (t - self.t_q)), 0.0)
        raise ValueError(f"unknown piece {piece}")

    def envelope(self, t):
        """Piecewise envelope ``M_i * P_i * g_i(t)`` that dominates ``f``."""
        masses = self.piece_mass
        bounds = (self.M1, self.M2, self.M3)
        return sum(bounds[i] * masses[i] * self.proposal_density(i + 1, t) for i in range(3))


def piece_inverse_cdf(piece: int, u, pieces: ProposalPieces):
    """Inverse distribution function of a piece's proposal."""
    u = np.asarray(u, dtype=float)
    if np.any((u < 0) | (u > 1)):
        raise ValueError("u must lie in [0, 1]")
    if piece == 1:
        out = pieces.t_m * np.sqrt(u)
    elif piece == 2:
        area = pieces.body_area
        # solve k2/2 x^2 + f_tm x = u * area in the cancellation-free form
        disc = np.maximum(pieces.f_tm ** 2 + 2.0 * pieces.k2 * u * area, 0.0)
        out = pieces.t_m + 2.0 * u * area / (pieces.f_tm + np.sqrt(disc))
    elif piece == 3:
        out = pieces.t_q - np.log1p(-u) / pieces.lambda1
    else:
        raise ValueError(f"unknown piece {piece}")
    return float(out) if out.ndim == 0 else out


def _max_ratio(ratio, lo, hi, n_grid, log_grid):
    grid = np.geomspace(lo, hi, n_grid) if log_grid else np.linspace(lo, hi, n_grid)
    vals = ratio(grid)
    i = int(np.argmax(vals))
    best = float(vals[i])
    # the ratio can have several local maxima (e.g. just past the mode and at
    # the far end of the body), so refine around every discrete peak,
    # including peaks at the edges where the maximum may sit inside a cell
    padded = np.concatenate([[-np.inf], vals, [-np.inf]])
    peaks = np.flatnonzero((padded[1:-1] >= padded[:-2]) & (padded[1:-1] >= padded[2:]))
    for j in peaks[np.argsort(vals[peaks])[::-1][:8]]:
        a, b = grid[max(j - 1, 0)], grid[min(j + 1, n_grid - 1)]
        res = optimize.minimize_scalar(lambda t: -float(ratio(np.array([t]))[0]),
                                       bounds=(a, b), method="bounded",
                                       options={"xatol": 1e-10 * max(abs(b), 1.0)})
        best = max(best, -float(res.fun))
    return best, i, vals


def build_proposal(params: FhtParams, q: float = 0.95,
                   ctrl: SeriesControl = DEFAULT_CONTROL, n_grid: int = 1024) -> ProposalPieces:
    """Precompute the three-piece envelope for ``params``."""
    if not 0 < q < 1:
        raise ProposalError("q must lie in (0, 1)")
    t_m, f_tm, _ = mode(params, ctrl)
    t_q = quantile(params, q, ctrl)
    if t_q <= t_m:
        raise ProposalError(f"q-quantile {t_q:g} does not exceed the mode {t_m:g}; raise q")
    f_tq = pdf(params, t_q, ctrl)
    q_tm = cdf(params, t_m, ctrl)
    lam1, c1 = series_coeffs(params, 1)
    k1 = f_tm / t_m
    k2 = (f_tm - f_tq) / (t_m - t_q)
    area = 0.5 * (t_q - t_m) * (f_tm + f_tq)

    # ratios of the piece-normalised target to the piece-normalised proposal
    def r1(t):
        return pdf(params, t, ctrl) / q_tm / (2.0 * t / t_m ** 2)

    def r2(t):
        return pdf(params, t, ctrl) / (q - q_tm) / ((f_tm + k2 * (t - t_m)) / area)

    def r3(t):
        return pdf(params, t, ctrl) / (1.0 - q) / (lam1 * np.exp(-lam1 * (t - t_q)))

    # f(t)/t vanishes at the origin; nothing below the 1e-9 quantile matters
    t_lo = min(max(t_m * 1e-6, quantile(params, 1e-9, ctrl)), 0.5 * t_m)
    m1, _, _ = _max_ratio(r1, t_lo, t_m, n_grid, log_grid=True)
    m2, _, _ = _max_ratio(r2, t_m, t_q, n_grid, log_grid=False)
    # beyond the point where only the leading term matters the ratio is flat
    t_far = max(t_q * 4.0, t_q + 60.0 / lam1)
    m3, i3, vals3 = _max_ratio(r3, t_q, t_far, n_grid, log_grid=False)
    tail_limit = c1 * math.exp(-lam1 * t_q) / (1.0 - q)
    if i3 == n_grid - 1 and vals3[-1] > tail_limit * (1 + 1e-6):
        raise ProposalError("tail ratio still increasing at the edge of the search range")
    m3 = max(m3, tail_limit)
    bounds = [m * SAFETY for m in (m1, m2, m3)]
    if not all(math.isfinite(m) and m > 0 for m in bounds):
        raise ProposalError(f"invalid bounding constants {bounds}")
    return ProposalPieces(
        t_m=t_m, f_tm=f_tm, t_q=t_q, f_tq=f_tq, q=q, q_tm=q_tm, k1=k1, k2=k2,
        lambda1=lam1, c1=c1, M1=bounds[0], M2=bounds[1], M3=bounds[2],
        b=params.rate_scale, phi=params.phase, eps=ctrl.eps, n_max=ctrl.n_max,
    )


@njit(cache=True)
def _pdf_at(t, b, phi, eps, n_max):
    s = b * t
    v, bd, n = _series.dens_scaled(s, phi, b, eps, n_max)
    return max(v, 0.0) * math.exp(-s)


@njit(cache=True)
def _draw_loop(gen, n, t_m, f_tm, t_q, f_tq, q, q_tm, k2, lam1, M1, M2, M3,
               b, phi, eps, n_max, max_trials, out, trials):
    area = 0.5 * (t_q - t_m) * (f_tm + f_tq)
    p2 = q - q_tm
    p3 = 1.0 - q
    for i in range(n):
        u = gen.random()
        if u <= q_tm:
            piece = 0
        elif u <= q:
            piece = 1
        else:
            piece = 2
        count = 0
        while True:
            count += 1
            if count > max_trials:
                return i, piece
            v = gen.random()
            if piece == 0:
                y = t_m * math.sqrt(v)
                g = 2.0 * y / (t_m * t_m)
                bound = M1 * q_tm * g
            elif piece == 1:
                disc = max(f_tm * f_tm + 2.0 * k2 * v * area, 0.0)
                y = t_m + 2.0 * v * area / (f_tm + math.sqrt(disc))
                g = (f_tm + k2 * (y - t_m)) / area
                bound = M2 * p2 * g
            else:
                y = t_q - math.log1p(-v) / lam1
                g = lam1 * math.exp(-lam1 * (y - t_q))
                bound = M3 * p3 * g
            w = gen.random()
            if bound > 0.0 and w * bound <= _pdf_at(y, b, phi, eps, n_max):
                out[i] = y
                trials[piece] += count
                break
    return n, -1


def sample_many(params: FhtParams, pieces: ProposalPieces, rng, size: int):
    """Draw ``size`` values; returns ``(draws, trials_per_piece)``."""
    gen = _as_generator(rng)
    out = np.empty(int(size))
    trials = np.zeros(3, dtype=np.int64)
    p = pieces
    done, piece = _draw_loop(gen, int(size), p.t_m, p.f_tm, p.t_q, p.f_tq, p.q, p.q_tm, p.k2,
                             p.lambda1, p.M1, p.M2, p.M3, p.b, p.phi, p.eps, p.n_max,
                             MAX_TRIALS, out, trials)
    if done < size:
        raise EnvelopeError(f"piece {piece + 1} rejected {MAX_TRIALS} candidates in a row")
    return out, trials


def sample_fht(params: FhtParams, pieces: ProposalPieces, rng):
    """One exact draw and the number of candidates tried in each piece."""
    draws, trials = sample_many(params, pieces, rng, 1)
    return float(draws[0]), trials
