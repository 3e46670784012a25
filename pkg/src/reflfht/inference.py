"""Metropolis-within-Gibbs sampling of regression coefficients, frailty
variances and per-subject frailties, plus posterior summaries.

Every scalar of ``(alpha, beta, gamma, log theta1, log theta2p)`` is its own
Gaussian random-walk block; each subject's frailty pair is another block.
Frailty blocks are conditionally independent given the rest, so all
subjects are proposed and accepted in one vectorised sweep.  Step sizes
adapt by Robbins-Monro during burn-in only.

Centred frailties are strongly coupled to the intercepts and to their own
variances, so by default each sweep also proposes two joint moves.  One
shifts a regression coefficient (or shears ``gamma``) against the frailty
vectors; the likelihood is unchanged, so only the priors enter its
acceptance ratio.  The
other rescales a frailty vector together with its variance.  Both are
ordinary Metropolis steps and can be switched off with
``ChainConfig(centering_moves=False)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import gammaln

from .likelihood import DEFAULT_LIKELIHOOD, LikelihoodControl, PackedData
from .recurrent_model import KINDS, Dataset, FrailtySpec, ModelParams, derived_frailty_summary
from .sampler import RngStream

__all__ = [
    "ChainConfig",
    "ConvergenceWarning",
    "PosteriorDraws",
    "PriorSpec",
    "ess",
    "geweke",
    "hpd",
    "log_posterior",
    "parameter_names",
    "run_chain",
    "summarize",
]

_LOG_2PI = math.log(2.0 * math.pi)


class ConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PriorSpec:
    var_alpha: float = 100.0
    var_beta: float = 100.0
    var_gamma: float = 100.0
    a: float = 1.0
    b: float = 1.0

    def __post_init__(self):
        if min(self.var_alpha, self.var_beta, self.var_gamma, self.a, self.b) <= 0:
            raise ValueError("prior variances and inverse-gamma parameters must be positive")


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 20_000
    burn_in: int = 5_000
    thin: int = 30
    seed: int = 0
    adapt_window: int | None = None  # defaults to the whole burn-in
    target_accept: float = 0.3
    step_coef: float = 0.05
    step_gamma: float = 0.2
    step_log_theta: float = 0.3
    step_frailty: float = 0.4
    step_shift: float = 0.1
    step_scale: float = 0.1
    centering_moves: bool = True
    store_frailties: bool = False

    def __post_init__(self):
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if (self.iterations - self.burn_in) % self.thin:
            raise ValueError("iterations - burn_in must be a multiple of thin")
        if self.adapt_window is not None and not 0 <= self.adapt_window <= self.burn_in:
            raise ValueError("adaptation must stop by the end of burn-in")

    @property
    def n_keep(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


def parameter_names(kind: str, p: int) -> list[str]:
    if kind not in KINDS:
        raise ValueError(f"unknown frailty kind {kind!r}")
    names = [f"alpha{j}" for j in range(p)] + [f"beta{j}" for j in range(p)]
    if kind != "independent":
        names.append("gamma")
    names.append("theta1")
    if kind != "shared":
        names.append("theta2p")
    return names


def _normal_logpdf(x, var):
    return -0.5 * (_LOG_2PI + math.log(var)) - 0.5 * np.square(x) / var


def _inv_gamma_logpdf(x, a, b):
    return a * math.log(b) - gammaln(a) - (a + 1.0) * math.log(x) - b / x


def _log_prior(alpha, beta, gamma, theta1, theta2p, kind, prior: PriorSpec):
    lp = float(np.sum(_normal_logpdf(alpha, prior.var_alpha)))
    lp += float(np.sum(_normal_logpdf(beta, prior.var_beta)))
    if kind != "independent":
        lp += float(_normal_logpdf(gamma, prior.var_gamma))
    lp += _inv_gamma_logpdf(theta1, prior.a, prior.b)
    if kind != "shared":
        lp += _inv_gamma_logpdf(theta2p, prior.a, prior.b)
    return lp


def _frailty_logdens(z, theta):
    return _normal_logpdf(z, theta)


def _shift_prior(x, d, var):
    # log N(x + d; 0, var) - log N(x; 0, var)
    return -0.5 * ((x + d) ** 2 - x * x) / var


def _shift_prior_vec(z, d, var):
    # sum of log N(z + d; 0, var) - log N(z; 0, var); d may be a vector
    return -0.5 * float(np.sum(2.0 * d * z + d * d)) / var


def log_posterior(mp: ModelParams, z1, z2p, dataset: Dataset, prior: PriorSpec = PriorSpec(),
                  ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD, packed: PackedData | None = None) -> float:
    """Unnormalised joint log posterior of parameters and frailties.

    All normal and inverse-gamma densities carry their normalising
    constants; the evidence is the only omitted term.
    """
    spec = mp.frailty
    kind = spec.kind
    if spec.theta1 <= 0 or (kind != "shared" and spec.theta2p <= 0):
        return -np.inf
    z1 = np.asarray(z1, dtype=float)
    z2p = np.zeros_like(z1) if kind == "shared" else np.asarray(z2p, dtype=float)
    lp = _log_prior(mp.alpha, mp.beta, spec.gamma, spec.theta1, spec.theta2p, kind, prior)
    if len(dataset) == 0:
        return lp
    packed = packed or PackedData(dataset)
    ll = packed.subject_logliks(mp.alpha, mp.beta, spec.gamma, z1, z2p, mp.x0, mp.nu, ctrl)
    lp += float(np.sum(ll))
    lp += float(np.sum(_frailty_logdens(z1, spec.theta1)))
    if kind != "shared":
        lp += float(np.sum(_frailty_logdens(z2p, spec.theta2p)))
    return lp


@dataclass
class PosteriorDraws:
    names: list[str]
    values: np.ndarray  # (K, d)
    kind: str
    x0: float
    nu: float
    covariate_names: tuple[str, ...]
    acceptance: dict[str, float] = field(default_factory=dict)
    step_sizes: dict[str, float] = field(default_factory=dict)
    frailty_mean: np.ndarray | None = None  # (n, 2)
    frailty_draws: np.ndarray | None = None  # (K, n, 2)
    config: dict = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    @property
    def K(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def model_params(self, row) -> ModelParams:
        """Parameters from one row of draws (or any vector in draw order)."""
        row = np.asarray(row, dtype=float)
        get = dict(zip(self.names, row))
        p = self.p
        alpha = np.array([get[f"alpha{j}"] for j in range(p)])
        beta = np.array([get[f"beta{j}"] for j in range(p)])
        spec = FrailtySpec(self.kind, get["theta1"], get.get("theta2p", 0.0), get.get("gamma", 0.0))
        return ModelParams(alpha, beta, spec, self.x0, self.nu)

    def draw(self, k: int) -> ModelParams:
        return self.model_params(self.values[k])

    def posterior_mean(self) -> ModelParams:
        return self.model_params(self.values.mean(axis=0))


def run_chain(dataset: Dataset, kind: str, prior: PriorSpec = PriorSpec(),
              config: ChainConfig = ChainConfig(), x0: float = 10.0, nu: float = 3.9,
              ctrl: LikelihoodControl = DEFAULT_LIKELIHOOD, init: dict | None = None,
              fixed: tuple[str, ...] = (), init_frailties=None, fix_frailties: bool = False,
              p: int | None = None) -> PosteriorDraws:
    """Run one Metropolis-within-Gibbs chain and return the retained draws.

    ``init`` overrides starting values by parameter name; names listed in
    ``fixed`` are held at their starting values.  An empty dataset samples
    the prior (``p`` then defaults to the dataset's covariate count).
    """
    p = dataset.p if p is None else p
    names = parameter_names(kind, p)
    n = len(dataset)
    packed = PackedData(dataset) if n else None
    gen = RngStream(config.seed, 1).generator()

    alpha = np.zeros(p)
    beta = np.zeros(p)
    gamma = 0.0
    theta = np.array([1.0, 1.0 if kind != "shared" else 0.0])
    z = np.zeros((n, 2))
    init = dict(init or {})
    for key, val in init.items():
        if key not in names:
            raise KeyError(f"unknown parameter {key!r} for {kind} model")
        if key.startswith("alpha"):
            alpha[int(key[5:])] = val
        elif key.startswith("beta"):
            beta[int(key[4:])] = val
        elif key == "gamma":
            gamma = float(val)
        elif key == "theta1":
            theta[0] = val
        elif key == "theta2p":
            theta[1] = val
    if init_frailties is not None:
        z[:] = np.asarray(init_frailties, dtype=float).reshape(n, 2)
    if kind == "shared":
        z[:, 1] = 0.0
    for key in fixed:
        if key not in names:
            raise KeyError(f"cannot fix unknown parameter {key!r}")

    def loglik_vec(a, b_, g, zz):
        if packed is None:
            return np.zeros(0)
        return packed.subject_logliks(a, b_, g, zz[:, 0], zz[:, 1], x0, nu, ctrl)

    ll = loglik_vec(alpha, beta, gamma, z)
    if not np.all(np.isfinite(ll)):
        raise FloatingPointError("initial state has zero likelihood")

    # scalar blocks in sweep order
    blocks = [n_ for n_ in names if n_ not in fixed]
    steps = {}
    for name in blocks:
        if name.startswith(("alpha", "beta")):
            steps[name] = config.step_coef
        elif name == "gamma":
            steps[name] = config.step_gamma
        else:
            steps[name] = config.step_log_theta
    z_dim = 1 if kind == "shared" else 2
    z_steps = np.full(n, config.step_frailty)
    moves = []
    if config.centering_moves and n and not fix_frailties:
        free = set(blocks)
        for j in range(p):
            if f"beta{j}" in free and (f"alpha{j}" in free or kind == "independent"):
                moves.append(f"shift_beta{j}")
        if kind != "shared":
            moves += [f"shift_alpha{j}" for j in range(p) if f"alpha{j}" in free]
        if kind == "correlated" and "gamma" in free:
            moves.append("shear_gamma")
        if "theta1" in free:
            moves.append("scale_z1")
        if kind != "shared" and "theta2p" in free:
            moves.append("scale_z2")
    for move in moves:
        steps[move] = config.step_scale if move.startswith("scale") else config.step_shift
    accepts = {name: 0 for name in blocks + moves}
    z_accepts = np.zeros(n)
    adapt_until = config.burn_in if config.adapt_window is None else config.adapt_window

    K = config.n_keep
    out = np.empty((K, len(names)))
    z_sum = np.zeros((n, 2))
    z_store = np.empty((K, n, 2)) if config.store_frailties else None
    keep = 0

    def current(name):
        if name.startswith("alpha"):
            return alpha[int(name[5:])]
        if name.startswith("beta"):
            return beta[int(name[4:])]
        if name == "gamma":
            return gamma
        return theta[0] if name == "theta1" else theta[1]

    for it in range(1, config.iterations + 1):
        adapting = it <= adapt_until
        rate = 1.0 / it ** 0.6

        # regression coefficients and gamma: full likelihood sweeps
        for name in blocks:
            if name.startswith("theta"):
                continue
            step = steps[name]
            old = current(name)
            new = old + step * gen.standard_normal()
            if name.startswith("alpha"):
                j = int(name[5:])
                a2 = alpha.copy()
                a2[j] = new
                ll_new = loglik_vec(a2, beta, gamma, z)
                var = prior.var_alpha
            elif name.startswith("beta"):
                j = int(name[4:])
                b2 = beta.copy()
                b2[j] = new
                ll_new = loglik_vec(alpha, b2, gamma, z)
                var = prior.var_beta
            else:
                ll_new = loglik_vec(alpha, beta, new, z)
                var = prior.var_gamma
            log_ratio = float(np.sum(ll_new) - np.sum(ll)) - 0.5 * (new * new - old * old) / var
            ok = np.isfinite(log_ratio) and math.log(gen.random()) < log_ratio
            if ok:
                if name.startswith("alpha"):
                    alpha[j] = new
                elif name.startswith("beta"):
                    beta[j] = new
                else:
                    gamma = new
                ll = ll_new
            if it > config.burn_in:
                accepts[name] += ok
            if adapting:
                steps[name] = step * math.exp(rate * (float(ok) - config.target_accept))

        # frailty variances on the log scale; only the frailty density involves them
        for idx, name in ((0, "theta1"), (1, "theta2p")):
            if name not in steps:
                continue
            step = steps[name]
            old = theta[idx]
            new = old * math.exp(step * gen.standard_normal())
            zz = z[:, idx]
            ss = float(np.sum(zz * zz))

            def log_target(th):
                # frailty normals + inverse gamma + log Jacobian
                return (-0.5 * n * math.log(th) - 0.5 * ss / th
                        - (prior.a + 1.0) * math.log(th) - prior.b / th + math.log(th))

            log_ratio = log_target(new) - log_target(old)
            ok = math.log(gen.random()) < log_ratio
            if ok:
                theta[idx] = new
            if it > config.burn_in:
                accepts[name] += ok
            if adapting:
                steps[name] = step * math.exp(rate * (float(ok) - config.target_accept))

        # per-subject frailty pairs, all subjects at once
        if n and not fix_frailties:
            prop = z + z_steps[:, None] * gen.standard_normal((n, 2))
            if z_dim == 1:
                prop[:, 1] = 0.0
            ll_new = loglik_vec(alpha, beta, gamma, prop)
            lp_old = _frailty_logdens(z[:, 0], theta[0])
            lp_new = _frailty_logdens(prop[:, 0], theta[0])
            if z_dim == 2:
                lp_old = lp_old + _frailty_logdens(z[:, 1], theta[1])
                lp_new = lp_new + _frailty_logdens(prop[:, 1], theta[1])
            log_ratio = (ll_new - ll) + (lp_new - lp_old)
            u = np.log(gen.random(n))
            ok = np.isfinite(log_ratio) & (u < log_ratio)
            z[ok] = prop[ok]
            ll = np.where(ok, ll_new, ll)
            if it > config.burn_in:
                z_accepts += ok
            if adapting:
                z_steps *= np.exp(rate * (ok.astype(float) - config.target_accept))

        # joint moves that undo the intercept/frailty and variance/frailty coupling
        for move in moves:
            step = steps[move]
            u = step * gen.standard_normal()
            if move.startswith("shift_beta"):
                # beta_j + z1 x_j and alpha_j + gamma z1 x_j are left unchanged
                j = int(move[10:])
                d_a = gamma * u
                dz = -u * packed.X[:, j]
                log_ratio = (_shift_prior(beta[j], u, prior.var_beta)
                             + _shift_prior(alpha[j], d_a, prior.var_alpha)
                             + _shift_prior_vec(z[:, 0], dz, theta[0]))
                ok = math.log(gen.random()) < log_ratio
                if ok:
                    beta[j] += u
                    alpha[j] += d_a
                    z[:, 0] += dz
            elif move.startswith("shift_alpha"):
                j = int(move[11:])
                dz = -u * packed.X[:, j]
                log_ratio = (_shift_prior(alpha[j], u, prior.var_alpha)
                             + _shift_prior_vec(z[:, 1], dz, theta[1]))
                ok = math.log(gen.random()) < log_ratio
                if ok:
                    alpha[j] += u
                    z[:, 1] += dz
            elif move == "shear_gamma":
                # gamma z1 + z2p is left unchanged
                d = -u * z[:, 0]
                log_ratio = (_shift_prior(gamma, u, prior.var_gamma)
                             + _shift_prior_vec(z[:, 1], d, theta[1]))
                ok = math.log(gen.random()) < log_ratio
                if ok:
                    gamma += u
                    z[:, 1] += d
            else:
                # (theta, z) -> (theta c^2, z c); normal terms and Jacobian reduce to 2u
                idx = 0 if move == "scale_z1" else 1
                prop = z.copy()
                prop[:, idx] *= math.exp(u)
                new_theta = theta[idx] * math.exp(2.0 * u)
                ll_new = loglik_vec(alpha, beta, gamma, prop)
                log_ratio = (float(np.sum(ll_new) - np.sum(ll))
                             + _inv_gamma_logpdf(new_theta, prior.a, prior.b)
                             - _inv_gamma_logpdf(theta[idx], prior.a, prior.b) + 2.0 * u)
                ok = np.isfinite(log_ratio) and math.log(gen.random()) < log_ratio
                if ok:
                    z = prop
                    theta[idx] = new_theta
                    ll = ll_new
            if it > config.burn_in:
                accepts[move] += ok
            if adapting:
                steps[move] = step * math.exp(rate * (float(ok) - config.target_accept))

        if it > config.burn_in and (it - config.burn_in) % config.thin == 0:
            row = []
            for name in names:
                row.append(current(name))
            out[keep] = row
            z_sum += z
            if z_store is not None:
                z_store[keep] = z
            keep += 1

    n_post = config.iterations - config.burn_in
    acceptance = {name: float(accepts[name] / n_post) for name in blocks + moves}
    if n and not fix_frailties:
        acceptance["frailty"] = float(np.mean(z_accepts) / n_post)
    notes = []
    for name, rate_ in acceptance.items():
        if rate_ == 0.0:
            msg = f"block {name} rejected every proposal after adaptation"
            notes.append(msg)
            warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    step_sizes = dict(steps)
    if n:
        step_sizes["frailty_median"] = float(np.median(z_steps))
    echo = asdict(config)
    echo.update(prior=asdict(prior), kind=kind, x0=x0, nu=nu, fixed=list(fixed),
                init="coefficients 0, variances 1, frailties 0" if not init else init)
    return PosteriorDraws(
        names=names, values=out, kind=kind, x0=x0, nu=nu,
        covariate_names=tuple(dataset.covariate_names) if len(dataset.covariate_names) == p
        else tuple(f"x{j}" for j in range(p)),
        acceptance=acceptance, step_sizes=step_sizes,
        frailty_mean=z_sum / max(K, 1) if n else None,
        frailty_draws=z_store, config=echo, warnings=notes,
    )


# ---------------------------------------------------------------------------
# summaries
# ---------------------------------------------------------------------------

def hpd(x, prob: float = 0.95):
    """Shortest interval containing ``ceil(prob * K)`` of the sorted draws."""
    x = np.sort(np.asarray(x, dtype=float).ravel())
    K = x.size
    if K == 0:
        raise ValueError("no draws")
    m = min(K, int(math.ceil(prob * K - 1e-9)))
    widths = x[m - 1:] - x[:K - m + 1]
    j = int(np.argmin(widths))
    return float(x[j]), float(x[j + m - 1])


def _autocorr(x):
    x = np.asarray(x, dtype=float)
    n = x.size
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[:n] / n
    if acov[0] <= 0:
        return None, 0.0
    return acov / acov[0], float(acov[0])


def _ips_tau(rho):
    """Integrated autocorrelation time by Geyer's initial positive sequence."""
    n = rho.size
    total = 0.0
    for m in range(n // 2):
        pair = rho[2 * m] + rho[2 * m + 1]
        if pair <= 0:
            break
        total += pair
    return -1.0 + 2.0 * total


def ess(x) -> float:
    """Effective sample size, capped at the number of draws.

    Returns ``nan`` for a constant chain.
    """
    x = np.asarray(x, dtype=float)
    rho, var = _autocorr(x)
    if rho is None or var < 1e-300:
        return float("nan")
    tau = _ips_tau(rho)
    if tau <= 0:
        return float(x.size)
    return float(min(x.size, x.size / tau))


def _spectrum0(x):
    rho, var = _autocorr(x)
    if rho is None:
        return 0.0
    return var * max(_ips_tau(rho), 1e-12)


def geweke(x, first: float = 0.1, last: float = 0.5) -> float:
    """Geweke z-score comparing the early and late segments of a chain.

    Returns ``nan`` when both segments are constant.
    """
    x = np.asarray(x, dtype=float)
    n = x.size
    a = x[: max(int(first * n), 2)]
    b = x[n - max(int(last * n), 2):]
    var = _spectrum0(a) / a.size + _spectrum0(b) / b.size
    if var <= 0:
        return float("nan")
    return float((a.mean() - b.mean()) / math.sqrt(var))


def summarize(draws: PosteriorDraws, prob: float = 0.95) -> dict:
    """Mean, SD, HPD interval, ESS and Geweke score for every parameter."""
    out = {}
    for name in draws.names:
        col = draws.column(name)
        lo, hi = hpd(col, prob)
        z = geweke(col) if col.size >= 20 else float("nan")
        out[name] = {
            "mean": float(col.mean()),
            "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
            "hpd_lower": lo,
            "hpd_upper": hi,
            "ess": ess(col),
            "geweke_z": z,
            "converged": bool(np.isfinite(z) and abs(z) <= 3.0),
        }
    if draws.kind == "correlated":
        t2 = draws.column("gamma") ** 2 * draws.column("theta1") + draws.column("theta2p")
        rho = draws.column("gamma") * np.sqrt(draws.column("theta1") / t2)
        for name, col in (("theta2", t2), ("rho", rho)):
            lo, hi = hpd(col, prob)
            out[name] = {"mean": float(col.mean()),
                         "sd": float(col.std(ddof=1)) if col.size > 1 else 0.0,
                         "hpd_lower": lo, "hpd_upper": hi, "derived": True}
    return out


def derived_at_mean(draws: PosteriorDraws):
    return derived_frailty_summary(draws.posterior_mean().frailty)
