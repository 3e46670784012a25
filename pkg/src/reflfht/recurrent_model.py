"""Frailty models for recurrent gap times and a generator of synthetic studies.

Each subject's volatility and barrier gap are log-linear in covariates:

    log(sigma_i)        = X_i' beta + z1_i
    log(kappa_i - x0)   = X_i' alpha + gamma * z1_i + z2p_i

with independent ``z1_i ~ N(0, theta1)`` and ``z2p_i ~ N(0, theta2p)``.
Three structures are supported: ``correlated`` (everything free),
``independent`` (``gamma = 0``) and ``shared`` (``theta2p = 0``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .fht_dist import DEFAULT_CONTROL, FhtParams, ParameterError, SeriesControl
from .sampler import RngStream, _as_generator, build_proposal, sample_many

__all__ = [
    "CovariateConfig",
    "Dataset",
    "DerivedFrailtySummary",
    "FollowupConfig",
    "FrailtySpec",
    "KINDS",
    "ModelParams",
    "SimulatedStudy",
    "SubjectData",
    "derived_frailty_summary",
    "draw_frailties",
    "gen_covariates",
    "gen_followups",
    "link_params",
    "reference_model",
    "round_half_up",
    "simulate_dataset",
    "simulate_subject",
]

KINDS = ("correlated", "independent", "shared")
MAX_LINEAR_PREDICTOR = 700.0


@dataclass(frozen=True)
class FrailtySpec:
    kind: str
    theta1: float
    theta2p: float
    gamma: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown frailty kind {self.kind!r}; expected one of {KINDS}")
        if self.theta1 < 0 or self.theta2p < 0:
            raise ValueError("frailty variances must be nonnegative")
        if self.kind == "independent" and self.gamma != 0:
            raise ValueError("independent frailties require gamma = 0")
        if self.kind == "shared" and self.theta2p != 0:
            raise ValueError("shared frailty requires theta2p = 0")


@dataclass(frozen=True)
class DerivedFrailtySummary:
    theta2: float
    rho: float


@dataclass(frozen=True)
class ModelParams:
    alpha: np.ndarray
    beta: np.ndarray
    frailty: FrailtySpec
    x0: float = 10.0
    nu: float = 3.9

    def __post_init__(self):
        object.__setattr__(self, "alpha", np.asarray(self.alpha, dtype=float))
        object.__setattr__(self, "beta", np.asarray(self.beta, dtype=float))
        if self.alpha.shape != self.beta.shape or self.alpha.ndim != 1:
            raise ValueError("alpha and beta must be vectors of equal length")
        if not self.x0 > self.nu:
            raise ValueError("x0 must exceed nu")

    @property
    def p(self) -> int:
        return self.alpha.shape[0]


@dataclass
class SubjectData:
    id: int | str
    gaps: np.ndarray
    events: np.ndarray
    covariates: np.ndarray

    def __post_init__(self):
        self.gaps = np.asarray(self.gaps, dtype=float)
        self.events = np.asarray(self.events, dtype=np.int64)
        self.covariates = np.asarray(self.covariates, dtype=float)
        if self.gaps.ndim != 1 or self.gaps.shape != self.events.shape or self.gaps.size < 1:
            raise ValueError(f"subject {self.id}: gaps and events must be equal-length, nonempty")
        if np.any(self.gaps < 0) or np.any(self.gaps != np.round(self.gaps)):
            raise ValueError(f"subject {self.id}: gaps must be nonnegative whole days")
        if not np.all(np.isin(self.events, (0, 1))):
            raise ValueError(f"subject {self.id}: events must be 0 or 1")
        if np.any(self.events[:-1] == 0):
            raise ValueError(f"subject {self.id}: only the last gap may be censored")

    @property
    def n_events(self) -> int:
        return int(self.events.sum())


@dataclass
class Dataset:
    subjects: list[SubjectData]
    covariate_names: tuple[str, ...] = ("x0", "x1", "x2")

    def __len__(self):
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    def __getitem__(self, i):
        return self.subjects[i]

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    def packed(self):
        """Flat arrays ``(gaps, events, offsets, X)`` for the compiled kernels."""
        if not self.subjects:
            return (np.empty(0), np.empty(0, np.int64), np.zeros(1, np.int64),
                    np.empty((0, self.p)))
        gaps = np.concatenate([s.gaps for s in self.subjects])
        events = np.concatenate([s.events for s in self.subjects]).astype(np.int64)
        lengths = np.array([s.gaps.size for s in self.subjects])
        offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
        X = np.vstack([s.covariates for s in self.subjects])
        return gaps, events, offsets, X


def link_params(X, mp: ModelParams, z1: float, z2p: float) -> FhtParams:
    """Per-subject hitting-time parameters from covariates and frailties."""
    X = np.asarray(X, dtype=float)
    if X.shape != mp.alpha.shape:
        raise ValueError(f"covariate length {X.shape} does not match coefficients {mp.alpha.shape}")
    eta_sigma = float(X @ mp.beta + z1)
    eta_kappa = float(X @ mp.alpha + mp.frailty.gamma * z1 + z2p)
    for name, eta in (("volatility", eta_sigma), ("barrier", eta_kappa)):
        if eta > MAX_LINEAR_PREDICTOR:
            raise ParameterError(f"{name} linear predictor {eta:g} overflows exp")
    return FhtParams(mp.x0, mp.nu, mp.x0 + math.exp(eta_kappa), math.exp(eta_sigma))


def draw_frailties(spec: FrailtySpec, rng, size=None):
    """Independent ``(z1, z2p)`` normal frailties; ``z2p = 0`` for the shared kind."""
    gen = _as_generator(rng)
    z1 = gen.normal(0.0, math.sqrt(spec.theta1), size=size)
    z2p = gen.normal(0.0, math.sqrt(spec.theta2p), size=size)
    if spec.kind == "shared":
        z2p = np.zeros_like(z2p) if size is not None else 0.0
    if size is None:
        return float(z1), float(z2p)
    return z1, z2p


def derived_frailty_summary(spec: FrailtySpec) -> DerivedFrailtySummary:
    """Variance of the barrier frailty and its correlation with the volatility frailty."""
    theta2 = spec.gamma ** 2 * spec.theta1 + spec.theta2p
    if theta2 == 0 or spec.theta1 == 0:
        rho = 0.0
    else:
        rho = spec.gamma * math.sqrt(spec.theta1 / theta2)
    return DerivedFrailtySummary(theta2, rho)


def round_half_up(x):
    return np.floor(np.asarray(x, dtype=float) + 0.5)


def simulate_subject(fht: FhtParams, follow_up: float, rng, pieces=None, q: float = 0.95,
                     ctrl: SeriesControl = DEFAULT_CONTROL, subject_id=0, covariates=()):
    """Gap times in whole days for one subject followed for ``follow_up`` days.

    Continuous gaps are drawn until the rounded total reaches ``follow_up``;
    the overshooting gap is replaced by the censored remainder.
    ``pieces`` may be passed to reuse a precomputed proposal.
    """
    if follow_up < 1:
        raise ValueError("follow-up must be at least one day")
    gen = _as_generator(rng)
    if pieces is None:
        pieces = build_proposal(fht, q, ctrl)
    gaps, events = [], []
    elapsed = 0.0
    while True:
        draw, _ = sample_many(fht, pieces, gen, 1)
        gap = float(round_half_up(draw[0]))
        if elapsed + gap >= follow_up:
            gaps.append(follow_up - elapsed)
            events.append(0)
            break
        gaps.append(gap)
        events.append(1)
        elapsed += gap
    return SubjectData(subject_id, np.array(gaps), np.array(events), np.asarray(covariates, float))


@dataclass(frozen=True)
class CovariateConfig:
    """Two positively skewed covariates joined by a Gaussian copula.

    Marginals are gamma with the given shape/scale; values are standardised
    by ``loc``/``scale`` (the marginal mean and SD when left as ``None``).
    """

    shapes: tuple[float, float]
    scales: tuple[float, float]
    copula_corr: float = 0.4
    loc: tuple[float, float] | None = None
    scale: tuple[float, float] | None = None
    names: tuple[str, str] = ("insulin", "bmi")

    def __post_init__(self):
        if any(v <= 0 for v in (*self.shapes, *self.scales)):
            raise ValueError("gamma shapes and scales must be positive")
        if not -1 < self.copula_corr < 1:
            raise ValueError("copula correlation must lie in (-1, 1)")

    @classmethod
    def from_moments(cls, means, sds, **kw):
        shapes = tuple((m / s) ** 2 for m, s in zip(means, sds))
        scales = tuple(s ** 2 / m for m, s in zip(means, sds))
        return cls(shapes=shapes, scales=scales, **kw)

    @classmethod
    def default(cls):
        # fasting insulin (mIU/L) and BMI (kg/m^2) summary moments
        return cls.from_moments((10.40, 31.71), (9.81, 6.18))

    @property
    def standardization(self):
        loc = self.loc or tuple(a * s for a, s in zip(self.shapes, self.scales))
        scale = self.scale or tuple(math.sqrt(a) * s for a, s in zip(self.shapes, self.scales))
        return np.array(loc), np.array(scale)


def gen_covariates(config: CovariateConfig, rng, size=None, standardize: bool = True):
    """Covariate vector(s) ``(1, x1, x2)`` with an intercept prepended."""
    gen = _as_generator(rng)
    n = 1 if size is None else int(size)
    cov = np.array([[1.0, config.copula_corr], [config.copula_corr, 1.0]])
    z = gen.multivariate_normal(np.zeros(2), cov, size=n, method="cholesky")
    u = stats.norm.cdf(z)
    raw = np.column_stack([
        stats.gamma.ppf(u[:, j], a=config.shapes[j], scale=config.scales[j]) for j in range(2)
    ])
    if standardize:
        loc, scale = config.standardization
        raw = (raw - loc) / scale
    X = np.column_stack([np.ones(n), raw])
    return X[0] if size is None else X


@dataclass(frozen=True)
class FollowupConfig:
    """Follow-up law: ``constant`` days, ``uniform`` integers on [low, high],
    or ``empirical`` resampling of supplied values."""

    kind: str = "uniform"
    low: int = 42
    high: int = 294
    constant: float = 168.0
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "uniform", "empirical"):
            raise ValueError(f"unknown follow-up kind {self.kind!r}")
        if self.kind == "empirical" and not self.values:
            raise ValueError("empirical follow-up needs values")
        if self.kind == "uniform" and not 1 <= self.low <= self.high:
            raise ValueError("need 1 <= low <= high")

    @classmethod
    def from_file(cls, path):
        vals = np.loadtxt(path, ndmin=1, delimiter=",")
        return cls(kind="empirical", values=tuple(float(v) for v in vals.ravel()))


def gen_followups(config: FollowupConfig, rng, size=None):
    gen = _as_generator(rng)
    n = 1 if size is None else int(size)
    if config.kind == "constant":
        out = np.full(n, float(config.constant))
    elif config.kind == "uniform":
        out = gen.integers(config.low, config.high + 1, size=n).astype(float)
    else:
        out = gen.choice(np.asarray(config.values, dtype=float), size=n, replace=True)
    return float(out[0]) if size is None else out


@dataclass
class SimulatedStudy:
    dataset: Dataset
    z1: np.ndarray
    z2p: np.ndarray
    follow_ups: np.ndarray
    truth: ModelParams
    seed: int
    meta: dict = field(default_factory=dict)


def simulate_dataset(mp: ModelParams, n: int, covariates: CovariateConfig | None = None,
                     followups: FollowupConfig | None = None, seed: int = 0, q: float = 0.95,
                     ctrl: SeriesControl = DEFAULT_CONTROL) -> SimulatedStudy:
    """Simulate ``n`` subjects; each subject uses its own stream derived from ``seed``."""
    if n < 1:
        raise ValueError("need at least one subject")
    covariates = covariates or CovariateConfig.default()
    followups = followups or FollowupConfig()
    if mp.p != 3:
        raise ValueError("the default generator produces an intercept and two covariates")
    subjects = []
    z1s, z2s, fus = np.empty(n), np.empty(n), np.empty(n)
    for i in range(n):
        gen = RngStream(seed, i).generator()
        X = gen_covariates(covariates, gen)
        z1, z2p = draw_frailties(mp.frailty, gen)
        fu = gen_followups(followups, gen)
        fht = link_params(X, mp, z1, z2p)
        subjects.append(simulate_subject(fht, fu, gen, q=q, ctrl=ctrl, subject_id=i, covariates=X))
        z1s[i], z2s[i], fus[i] = z1, z2p, fu
    names = ("intercept",) + tuple(covariates.names)
    return SimulatedStudy(Dataset(subjects, names), z1s, z2s, fus, mp, seed)


def reference_model(kind: str = "correlated", x0: float = 10.0, nu: float = 3.9) -> ModelParams:
    """Ground truth of the three simulation scenarios."""
    alpha = np.array([2.9, 0.2, -0.1])
    beta = np.array([0.9, -0.2, -0.1])
    if kind == "correlated":
        spec = FrailtySpec(kind, 0.2, 0.3, -0.55)
    elif kind == "independent":
        spec = FrailtySpec(kind, 0.2, 0.3, 0.0)
    elif kind == "shared":
        spec = FrailtySpec(kind, 0.2, 0.0, -1.0)
    else:
        raise ValueError(f"unknown frailty kind {kind!r}")
    return ModelParams(alpha, beta, spec, x0, nu)


def with_frailty(mp: ModelParams, **changes) -> ModelParams:
    return replace(mp, frailty=replace(mp.frailty, **changes))
