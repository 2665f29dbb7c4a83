"""Concrete models: linear-Gaussian, Cox (Poisson AR(1)), theta-logistic and
constrained random walk, with their score functionals and data helpers."""

import math
import warnings
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np
from scipy.special import gammaln
from scipy.stats import truncnorm

from .errors import InvalidInputError
from .fk import GaussianTransitionFK
from .gaussian import GaussianMarginals, LinearGaussianModel, NonlinearGaussianSSM, ieks

_LOG_2PI = math.log(2.0 * math.pi)


def _normal_logpdf(x, mean, var):
    return -0.5 * ((x - mean) ** 2 / var + math.log(var) + _LOG_2PI)


class _ScalarNormal:
    """``N(mean, var)`` for every t, as a proposal family over 1-D states."""

    def __init__(self, mean, var):
        self.mean = float(mean)
        self.var = float(var)

    def sample(self, t, n, rng):
        return self.mean + math.sqrt(self.var) * rng.standard_normal((n, 1))

    def logpdf(self, t, x):
        return _normal_logpdf(np.asarray(x)[..., 0], self.mean, self.var)


class UniformBox:
    """Uniform law on ``[low, high]^d`` for every t."""

    def __init__(self, low, high, dim=1):
        if not high > low:
            raise InvalidInputError("need high > low")
        self.low, self.high, self.dim = float(low), float(high), int(dim)
        self._logdens = -dim * math.log(high - low)

    def sample(self, t, n, rng):
        return rng.uniform(self.low, self.high, size=(n, self.dim))

    def logpdf(self, t, x):
        x = np.asarray(x)
        inside = np.all((x >= self.low) & (x <= self.high), axis=-1)
        return np.where(inside, self._logdens, -np.inf)


class ProposalFK(GaussianTransitionFK):
    """Gaussian-transition model whose q_t and nu_t come from proposal families."""

    def __init__(self, horizon, state_dim, proposal, aux=None):
        self.horizon = int(horizon)
        self.state_dim = int(state_dim)
        self.proposal = proposal
        self.aux = proposal if aux is None else aux

    def sample_proposal(self, t, n, rng):
        return self.proposal.sample(t, n, rng)

    def proposal_logdensity(self, t, x):
        return self.proposal.logpdf(t, x)

    def aux_logdensity(self, t, x):
        return self.aux.logpdf(t, x)


# ---------------------------------------------------------------------------
# linear-Gaussian
# ---------------------------------------------------------------------------


def prior_marginals(lg):
    """Marginal laws of x_t under the dynamics alone (no observations)."""
    d = lg.state_dim
    means = np.empty((lg.horizon + 1, d))
    covs = np.empty((lg.horizon + 1, d, d))
    means[0], covs[0] = lg.m0, lg.P0
    for t in range(1, lg.horizon + 1):
        F = lg.F[t - 1]
        means[t] = F @ means[t - 1] + lg.b[t - 1]
        covs[t] = F @ covs[t - 1] @ F.T + lg.Q[t - 1]
    return GaussianMarginals(means, covs)


class LinearGaussianFK(ProposalFK):
    """Feynman-Kac view of a :class:`LinearGaussianModel`.

    ``proposal`` defaults to the prior marginals. With ``observed=False`` all
    potentials are 1.
    """

    def __init__(self, lg, proposal=None, aux=None, observed=True):
        proposal = prior_marginals(lg) if proposal is None else proposal
        super().__init__(lg.horizon, lg.state_dim, proposal, aux)
        self.lg = lg
        self.observed = observed
        self._init = GaussianMarginals(lg.m0[None], lg.P0[None])
        self._chols = np.linalg.cholesky(lg.Q) if lg.horizon else np.empty((0, lg.state_dim, lg.state_dim))
        self._obs = GaussianMarginals(np.zeros((lg.horizon + 1, lg.ys.shape[1])), lg.R)

    def sample_init(self, n, rng):
        return self._init.sample(0, n, rng)

    def init_logdensity(self, x):
        return self._init.logpdf(0, x)

    def transition_mean(self, t, x_prev):
        return x_prev @ self.lg.F[t - 1].T + self.lg.b[t - 1]

    def transition_chol(self, t):
        return self._chols[t - 1]

    def log_potential(self, t, x):
        x = np.asarray(x, dtype=float)
        if not self.observed:
            return np.zeros(x.shape[:-1])
        resid = self.lg.ys[t] - (x @ self.lg.H[t].T + self.lg.c[t])
        return self._obs.logpdf(t, resid)


def lgssm_fk(lg, proposal="smoother", inflation=1.0, observed=True):
    """LGSSM model with q_t = nu_t set to ``"smoother"`` marginals, ``"prior"`` marginals,
    or an explicit proposal family."""
    if isinstance(proposal, str):
        if proposal == "smoother":
            from .gaussian import kalman_smoother

            proposal = kalman_smoother(lg, inflation)[0]
        elif proposal == "prior":
            proposal = prior_marginals(lg).with_inflation(inflation)
        else:
            raise InvalidInputError(f"unknown proposal {proposal!r}")
    return LinearGaussianFK(lg, proposal, observed=observed)


def scalar_lgssm(ys, F=0.9, Q=0.5, H=1.0, R=1.0, m0=0.0, P0=1.0):
    """1-D time-invariant LGSSM."""
    return LinearGaussianModel.time_invariant(F, Q, H, R, [m0], [[P0]], ys)


def simulate_scalar_lgssm(T, seed, **params):
    lg = scalar_lgssm(np.zeros(T + 1), **params)
    xs, ys = lg.simulate(np.random.default_rng(seed))
    return replace(lg, ys=ys), xs


# ---------------------------------------------------------------------------
# Cox / Poisson AR(1)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CoxParams:
    mu: float = 0.0
    rho: float = 0.9
    sigma2: float = 0.25
    lam: float = 1.0

    def __post_init__(self):
        if not abs(self.rho) < 1.0:
            raise InvalidInputError("need |rho| < 1")
        if not self.sigma2 > 0.0:
            raise InvalidInputError("need sigma2 > 0")

    @property
    def stationary_var(self):
        return self.sigma2 / (1.0 - self.rho**2)


class CoxModel(ProposalFK):
    """``x_t = mu + rho (lam x_{t-1} - mu) + N(0, sigma2)``, ``y_t ~ Poisson(exp(x_t))``.

    The initial law, q_t and nu_t are all the stationary ``N(mu, sigma2 / (1 - rho^2))``.
    """

    def __init__(self, params, ys):
        self.params = params
        self.ys = np.asarray(ys, dtype=float).ravel()
        stationary = _ScalarNormal(params.mu, params.stationary_var)
        super().__init__(self.ys.shape[0] - 1, 1, stationary)
        self._chol = np.array([[math.sqrt(params.sigma2)]])
        self._log_y_fact = gammaln(self.ys + 1.0)

    def sample_init(self, n, rng):
        return self.proposal.sample(0, n, rng)

    def init_logdensity(self, x):
        return self.proposal.logpdf(0, x)

    def transition_mean(self, t, x_prev):
        p = self.params
        return p.mu + p.rho * (p.lam * x_prev - p.mu)

    def transition_chol(self, t):
        return self._chol

    def log_potential(self, t, x):
        x = np.asarray(x, dtype=float)[..., 0]
        return self.ys[t] * x - np.exp(x) - self._log_y_fact[t]


def cox_model(params, ys):
    return CoxModel(params, ys)


def simulate_cox(params, T, seed):
    """``(xs, ys)`` drawn from the Cox model."""
    rng = np.random.default_rng(seed)
    xs = np.empty(T + 1)
    xs[0] = params.mu + math.sqrt(params.stationary_var) * rng.standard_normal()
    for t in range(1, T + 1):
        xs[t] = params.mu + params.rho * (params.lam * xs[t - 1] - params.mu) + math.sqrt(params.sigma2) * rng.standard_normal()
    return xs, rng.poisson(np.exp(xs)).astype(float)


def _vectorized(fn):
    fn.vectorized = True
    return fn


def cox_score(sigma2, mu, rho):
    """Derivative of the complete-data log-likelihood in sigma2, as a trajectory functional.

    Accepts one trajectory ``(T + 1, 1)`` or a block ``(T + 1, N, 1)``.
    """

    @_vectorized
    def phi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim >= 2 and x.shape[-1] == 1:
            x = x[..., 0]
        T = x.shape[0] - 1
        innov = x[1:] - mu - rho * (x[:-1] - mu)
        return (
            -(T + 1) / (2.0 * sigma2)
            + (1.0 - rho**2) / (2.0 * sigma2**2) * (x[0] - mu) ** 2
            + np.sum(innov**2, axis=0) / (2.0 * sigma2**2)
        )

    return phi


# ---------------------------------------------------------------------------
# constrained random walk
# ---------------------------------------------------------------------------


class ConstrainedRWModel(ProposalFK):
    """``x_0 ~ N(0, 1)``, ``x_t = x_{t-1} + N(0, sigma^2)``, potentials ``1{|x_t| <= 1}``,
    q_t = nu_t = U([-1, 1])."""

    def __init__(self, sigma, T):
        if not sigma > 0:
            raise InvalidInputError("need sigma > 0")
        super().__init__(T, 1, UniformBox(-1.0, 1.0))
        self.sigma = float(sigma)
        self._chol = np.array([[self.sigma]])

    def sample_init(self, n, rng):
        return rng.standard_normal((n, 1))

    def init_logdensity(self, x):
        return _normal_logpdf(np.asarray(x)[..., 0], 0.0, 1.0)

    def transition_mean(self, t, x_prev):
        return x_prev

    def transition_chol(self, t):
        return self._chol

    def log_potential(self, t, x):
        x = np.asarray(x)[..., 0]
        return np.where(np.abs(x) <= 1.0, 0.0, -np.inf)

    def log_stitch_bound(self, c):
        # sup of N(x; x', sigma^2) / (1/2)
        return math.log(2.0) - 0.5 * math.log(2.0 * math.pi * self.sigma**2)


def constrained_rw_model(sigma, T):
    return ConstrainedRWModel(sigma, T)


def rw_fisher_score(sigma):
    """``log(sigma) + sum_t (x_t - x_{t-1})^2 / sigma^3``."""

    @_vectorized
    def phi(x):
        x = np.asarray(x, dtype=float)
        if x.ndim >= 2 and x.shape[-1] == 1:
            x = x[..., 0]
        return math.log(sigma) + np.sum(np.diff(x, axis=0) ** 2, axis=0) / sigma**3

    return phi


# ---------------------------------------------------------------------------
# theta-logistic
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaLogisticParams:
    """Drift ``x + tau0 - tau1 exp(tau2 x)``, state noise sd ``sigma_x``, observation noise sd ``sigma_y``."""

    tau0: float = 0.15
    tau1: float = 0.12
    tau2: float = 0.1
    sigma_x: float = 0.47
    sigma_y: float = 0.39

    def __post_init__(self):
        if not (self.sigma_x > 0 and self.sigma_y > 0):
            raise InvalidInputError("noise scales must be positive")

    def as_array(self):
        return np.array([self.tau0, self.tau1, self.tau2, self.sigma_x, self.sigma_y])


def theta_logistic_ssm(params, ys):
    p = params

    def f(t, x):
        return x + p.tau0 - p.tau1 * np.exp(p.tau2 * x)

    def f_jac(t, x):
        return np.atleast_2d(1.0 - p.tau1 * p.tau2 * np.exp(p.tau2 * x))

    return NonlinearGaussianSSM(
        f=f,
        h=lambda t, x: x,
        Q=[[p.sigma_x**2]],
        R=[[p.sigma_y**2]],
        m0=[0.0],
        P0=[[1.0]],
        ys=ys,
        f_jac=f_jac,
        h_jac=lambda t, x: np.eye(1),
    )


class ThetaLogisticModel(ProposalFK):
    """Theta-logistic model with ``x_0 ~ N(0, 1)`` and Gaussian observation potentials."""

    def __init__(self, params, ys, proposal):
        self.params = params
        self.ys = np.asarray(ys, dtype=float).ravel()
        super().__init__(self.ys.shape[0] - 1, 1, proposal)
        self._chol = np.array([[params.sigma_x]])

    def sample_init(self, n, rng):
        return rng.standard_normal((n, 1))

    def init_logdensity(self, x):
        return _normal_logpdf(np.asarray(x)[..., 0], 0.0, 1.0)

    def transition_mean(self, t, x_prev):
        p = self.params
        return x_prev + p.tau0 - p.tau1 * np.exp(p.tau2 * x_prev)

    def transition_chol(self, t):
        return self._chol

    def log_potential(self, t, x):
        return _normal_logpdf(self.ys[t], np.asarray(x)[..., 0], self.params.sigma_y**2)


def theta_logistic_model(params, ys, proposal=None, n_iterations=25, inflation=1.0):
    """Theta-logistic model with q_t = nu_t from IEKS marginals.

    ``proposal`` may be precomputed marginals (used as is) or ``None`` to run
    ``n_iterations`` of IEKS from scratch.
    """
    if proposal is None:
        proposal = ieks(theta_logistic_ssm(params, ys), n_iterations, inflation=inflation)
    return ThetaLogisticModel(params, ys, proposal)


def simulate_theta_logistic(params, T, seed):
    rng = np.random.default_rng(seed)
    xs = np.empty(T + 1)
    xs[0] = rng.standard_normal()
    for t in range(1, T + 1):
        xs[t] = xs[t - 1] + params.tau0 - params.tau1 * math.exp(params.tau2 * xs[t - 1]) + params.sigma_x * rng.standard_normal()
    return xs, xs + params.sigma_y * rng.standard_normal(T + 1)


@dataclass(frozen=True)
class ThetaLogisticPrior:
    """tau_i ~ N(tau_mean, tau_sd^2) truncated to [tau_low, tau_high];
    precisions 1/sigma^2 ~ Gamma(shape, rate)."""

    tau_mean: float = 0.0
    tau_sd: float = 1.0
    tau_low: float = 0.0
    tau_high: float = 3.0
    prec_shape: float = 2.0
    prec_rate: float = 1.0

    def _trunc(self):
        a = (self.tau_low - self.tau_mean) / self.tau_sd
        b = (self.tau_high - self.tau_mean) / self.tau_sd
        return truncnorm(a, b, loc=self.tau_mean, scale=self.tau_sd)

    def tau_logpdf(self, taus):
        return float(np.sum(self._trunc().logpdf(np.asarray(taus))))

    def sample(self, rng):
        taus = self._trunc().rvs(size=3, random_state=rng)
        precs = rng.gamma(self.prec_shape, 1.0 / self.prec_rate, size=2)
        return ThetaLogisticParams(*taus, *(1.0 / np.sqrt(precs)))


def gamma_precision_posterior(residuals, shape, rate):
    """Shape and rate of the Gamma posterior of a Gaussian precision given zero-mean residuals."""
    residuals = np.asarray(residuals, dtype=float).ravel()
    return shape + 0.5 * residuals.size, rate + 0.5 * float(np.sum(residuals**2))


class ThetaLogisticKernel:
    """Parameter update given a trajectory: conjugate Gamma draws for both
    precisions, then one joint random-walk Metropolis step on the taus."""

    def __init__(self, ys, prior=None, rw_scale=0.05):
        self.ys = np.asarray(ys, dtype=float).ravel()
        self.prior = ThetaLogisticPrior() if prior is None else prior
        self.rw_scale = float(rw_scale)
        self.accepted = 0
        self.proposed = 0

    @staticmethod
    def _drift_resid(taus, x):
        tau0, tau1, tau2 = taus
        return x[1:] - x[:-1] - tau0 + tau1 * np.exp(tau2 * x[:-1])

    def __call__(self, theta, trajectory, rng):
        x = np.asarray(trajectory, dtype=float).ravel()
        pr = self.prior
        taus = np.array([theta.tau0, theta.tau1, theta.tau2])
        resid_x = self._drift_resid(taus, x)
        shape, rate = gamma_precision_posterior(resid_x, pr.prec_shape, pr.prec_rate)
        prec_x = rng.gamma(shape, 1.0 / rate)
        shape, rate = gamma_precision_posterior(x - self.ys, pr.prec_shape, pr.prec_rate)
        prec_y = rng.gamma(shape, 1.0 / rate)

        proposal = taus + self.rw_scale * rng.standard_normal(3)
        self.proposed += 1
        log_prior_new = pr.tau_logpdf(proposal)
        if np.isfinite(log_prior_new):
            new_resid = self._drift_resid(proposal, x)
            log_ratio = 0.5 * prec_x * (np.sum(resid_x**2) - np.sum(new_resid**2))
            log_ratio += log_prior_new - pr.tau_logpdf(taus)
            if math.log(rng.random()) < log_ratio:
                taus = proposal
                self.accepted += 1
        return ThetaLogisticParams(*taus, 1.0 / math.sqrt(prec_x), 1.0 / math.sqrt(prec_y))


def load_nutria():
    """Nutria abundance series (120 monthly values, as shipped)."""
    try:
        text = resources.files("dsmc").joinpath("data/nutria.txt").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        warnings.warn("nutria data missing; using synthetic theta-logistic data", RuntimeWarning)
        return simulate_theta_logistic(ThetaLogisticParams(), 119, seed=2010)[1]
    return np.array([float(v) for v in text.split()])
