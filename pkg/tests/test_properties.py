"""Property-based checks of distribution, sampler and model invariants."""

import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from scipy import integrate

from reflfht.fht_dist import (FhtParams, SeriesControl, cdf, evaluate, interval_prob, pdf,
                              quantile, series_coeffs, survival)
from reflfht.inference import hpd
from reflfht.recurrent_model import (FrailtySpec, ModelParams, link_params, simulate_subject)
from reflfht.sampler import RngStream, build_proposal

SLOW = settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.too_slow])
FAST = settings(max_examples=60, deadline=None)


@st.composite
def fht_params(draw, sigma=(0.5, 5.0), width=(5.0, 80.0)):
    """Parameters with sigma and kappa - nu inside the given ranges."""
    nu = draw(st.floats(-5.0, 10.0))
    L = draw(st.floats(*width))
    frac = draw(st.floats(0.05, 1.0))
    s = draw(st.floats(*sigma))
    return FhtParams(x0=nu + frac * L, nu=nu, kappa=nu + L, sigma=s)


def _support(p, lo=1e-10, hi=1e-10):
    return quantile(p, lo), quantile(p, 1.0 - hi)


@SLOW
@given(fht_params())
def test_pdf_nonnegative_and_cdf_monotone_in_unit_interval(p):
    _, t_hi = _support(p)
    t = np.linspace(0.0, t_hi, 1000)
    f, F = pdf(p, t), cdf(p, t)
    assert cdf(p, 0.0) == 0.0
    assert np.all(f >= 0) and np.all(np.isfinite(f))
    assert np.all((F >= 0) & (F <= 1))
    assert np.all(np.diff(F) >= 0)


@SLOW
@given(fht_params())
def test_density_integrates_to_one(p):
    _, t_hi = _support(p)
    area, err = integrate.quad(lambda t: float(pdf(p, t)), 0.0, t_hi, limit=400,
                               epsabs=1e-11, epsrel=1e-11)
    assert abs(area - 1.0) <= 1e-6


@SLOW
@given(fht_params())
def test_central_difference_of_cdf_matches_pdf(p):
    t_lo, t_hi = _support(p, 1e-6, 1e-6)
    t = np.linspace(t_lo, t_hi, 100)
    h = 1e-4 * t
    fd = (cdf(p, t + h) - cdf(p, t - h)) / (2 * h)
    assert np.max(np.abs(fd - pdf(p, t))) <= 1e-6


@FAST
@given(fht_params(), st.floats(40.0, 300.0))
def test_tail_is_the_leading_exponential(p, lam_t):
    lam, c = series_coeffs(p, 1)
    t = lam_t / lam
    ratio = pdf(p, t) / (c * lam * math.exp(-lam * t))
    assert abs(ratio - 1.0) <= 1e-6


@FAST
@given(fht_params(), st.floats(-8.0, 7.0), st.sampled_from(["pdf", "survival", "cdf"]))
def test_reported_truncation_bound_is_honest(p, log_t, kind):
    t = math.exp(log_t)
    eps = 1e-8
    loose = evaluate(p, t, kind, SeriesControl(eps=eps))
    tight = evaluate(p, t, kind, SeriesControl(eps=eps / 10))
    gap = abs(np.asarray(loose.value).item() - np.asarray(tight.value).item())
    assert gap <= np.asarray(loose.bound).item() + 1e-15


@FAST
@given(fht_params(), st.integers(0, 400))
def test_interval_prob_is_a_cdf_difference(p, day):
    lo = max(day - 0.5, 0.0)
    ref = cdf(p, day + 0.5) - cdf(p, lo)
    assert interval_prob(p, day) == pytest.approx(ref, abs=3e-12)
    assert survival(p, day + 0.5) <= survival(p, lo)


@settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.too_slow])
@given(fht_params(), st.sampled_from([0.5, 0.8, 0.95]))
def test_envelope_dominates_density(p, q):
    pieces = build_proposal(p, q=q)
    grids = [np.linspace(pieces.t_m * 1e-3, pieces.t_m, 10_000),
             np.linspace(pieces.t_m, pieces.t_q, 10_000),
             pieces.t_q + np.linspace(0.0, 40.0 / pieces.lambda1, 10_000)]
    for t in grids:
        assert np.all(pieces.envelope(t) >= pdf(p, t))


coef = st.floats(-0.5, 0.5)


@st.composite
def models(draw):
    kind = draw(st.sampled_from(["correlated", "independent", "shared"]))
    gamma = 0.0 if kind == "independent" else draw(st.floats(-1.0, 1.0))
    theta2p = 0.0 if kind == "shared" else draw(st.floats(0.01, 1.0))
    spec = FrailtySpec(kind, draw(st.floats(0.01, 1.0)), theta2p, gamma)
    alpha = [draw(st.floats(0.0, 4.0)), draw(coef), draw(coef)]
    beta = [draw(st.floats(-0.5, 1.5)), draw(coef), draw(coef)]
    return ModelParams(alpha, beta, spec)


@FAST
@given(models(), st.lists(st.floats(-3, 3), min_size=2, max_size=2),
       st.floats(-3, 3), st.floats(-3, 3))
def test_link_output_keeps_barrier_above_start(mp, x, z1, z2p):
    if mp.frailty.kind == "shared":
        z2p = 0.0
    X = np.array([1.0, *x])
    p = link_params(X, mp, z1, z2p)
    assert p.kappa > p.x0 > p.nu and p.sigma > 0
    if mp.frailty.kind == "shared":
        lhs = math.log(p.kappa - p.x0) - X @ mp.alpha
        rhs = mp.frailty.gamma * (math.log(p.sigma) - X @ mp.beta)
        assert lhs == pytest.approx(rhs, abs=1e-12)


@SLOW
@given(fht_params(sigma=(1.0, 5.0), width=(5.0, 40.0)), st.integers(1, 400), st.integers(0, 2**32))
def test_simulated_subject_invariants(p, follow_up, seed):
    subj = simulate_subject(p, follow_up, RngStream(seed))
    assert subj.gaps.sum() == follow_up
    assert subj.events[-1] == 0 and np.all(subj.events[:-1] == 1)
    assert np.all(subj.gaps >= 0) and np.all(subj.gaps == np.round(subj.gaps))


@FAST
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=200))
def test_hpd_interval_holds_the_required_share(xs):
    x = np.array(xs)
    lo, hi = hpd(x)
    inside = np.sum((x >= lo) & (x <= hi))
    assert inside >= math.ceil(0.95 * x.size)
    assert lo <= hi
