"""Linear-Gaussian state-space machinery.

Kalman filter and RTS smoother (exact, used both as an oracle and to build
proposals), exact posterior sampling, Taylor linearization of nonlinear
models with additive Gaussian noise, and the iterated extended Kalman
smoother whose marginals serve as proposals.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve, solve_triangular

from .errors import InvalidInputError, IterationError, LinearizationError

_LOG_2PI = np.log(2.0 * np.pi)


def _sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def _regularize(p):
    """Symmetrize and lift the smallest eigenvalue to at least ``1e-9 * trace / d``.

    Well-conditioned matrices come back unchanged (up to symmetrization), so
    densities built from them match the model's own to rounding.
    """
    p = _sym(p)
    d = p.shape[-1]
    floor = 1e-9 * np.maximum(np.trace(p, axis1=-2, axis2=-1) / d, 0.0)
    low = np.linalg.eigvalsh(p)[..., 0]
    lift = np.where(low < floor, floor - low, 0.0)
    if not np.any(lift > 0):
        return p
    return p + lift[..., None, None] * np.eye(d)


@dataclass
class LinearGaussianModel:
    """``x_0 ~ N(m0, P0)``, ``x_t = F_t x_{t-1} + b_t + N(0, Q_t)``, ``y_t = H_t x_t + c_t + N(0, R_t)``.

    Transition arrays are indexed by ``t - 1`` (length T), observation arrays
    by ``t`` (length T + 1).
    """

    F: np.ndarray
    b: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    c: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=float)
        if self.ys.ndim == 1:
            self.ys = self.ys[:, None]
        self.m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        self.P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        d = self.m0.shape[0]
        dy = self.ys.shape[1]
        T = self.ys.shape[0] - 1
        self.F = np.asarray(self.F, dtype=float).reshape(T, d, d)
        self.b = np.asarray(self.b, dtype=float).reshape(T, d)
        self.Q = np.asarray(self.Q, dtype=float).reshape(T, d, d)
        self.H = np.asarray(self.H, dtype=float).reshape(T + 1, dy, d)
        self.c = np.asarray(self.c, dtype=float).reshape(T + 1, dy)
        self.R = np.asarray(self.R, dtype=float).reshape(T + 1, dy, dy)
        for name in ("Q", "R"):
            mats = getattr(self, name)
            if not np.allclose(mats, np.swapaxes(mats, -1, -2)):
                raise InvalidInputError(f"{name} must be symmetric")

    @property
    def horizon(self):
        return self.ys.shape[0] - 1

    @property
    def state_dim(self):
        return self.m0.shape[0]

    @classmethod
    def time_invariant(cls, F, Q, H, R, m0, P0, ys, b=None, c=None):
        ys = np.asarray(ys, dtype=float)
        if ys.ndim == 1:
            ys = ys[:, None]
        T = ys.shape[0] - 1
        F, Q, H, R = (np.atleast_2d(np.asarray(a, dtype=float)) for a in (F, Q, H, R))
        d, dy = F.shape[0], H.shape[0]
        b = np.zeros(d) if b is None else np.atleast_1d(b)
        c = np.zeros(dy) if c is None else np.atleast_1d(c)
        return cls(
            F=np.broadcast_to(F, (T, d, d)).copy(),
            b=np.broadcast_to(b, (T, d)).copy(),
            Q=np.broadcast_to(Q, (T, d, d)).copy(),
            H=np.broadcast_to(H, (T + 1, dy, d)).copy(),
            c=np.broadcast_to(c, (T + 1, dy)).copy(),
            R=np.broadcast_to(R, (T + 1, dy, dy)).copy(),
            m0=m0,
            P0=P0,
            ys=ys,
        )

    def simulate(self, rng):
        """Draw ``(xs, ys)`` from the model; the stored observations are ignored."""
        d, dy = self.state_dim, self.ys.shape[1]
        xs = np.empty((self.horizon + 1, d))
        obs = np.empty((self.horizon + 1, dy))
        xs[0] = rng.multivariate_normal(self.m0, self.P0)
        for t in range(self.horizon + 1):
            if t:
                xs[t] = rng.multivariate_normal(self.F[t - 1] @ xs[t - 1] + self.b[t - 1], self.Q[t - 1])
            obs[t] = rng.multivariate_normal(self.H[t] @ xs[t] + self.c[t], self.R[t])
        return xs, obs


@dataclass
class GaussianMarginals:
    """Per-time Gaussians ``N(means[t], inflation * covs[t])``.

    Also usable as a proposal family (``sample`` / ``logpdf``).
    """

    means: np.ndarray
    covs: np.ndarray
    inflation: float = 1.0
    _chols: np.ndarray = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=float)
        if self.means.ndim == 1:
            self.means = self.means[:, None]
        d = self.means.shape[1]
        self.covs = np.asarray(self.covs, dtype=float).reshape(-1, d, d)
        if self.inflation <= 0:
            raise InvalidInputError("inflation must be positive")
        self._chols = np.linalg.cholesky(_regularize(self.inflation * self.covs))

    def __len__(self):
        return self.means.shape[0]

    def with_inflation(self, inflation):
        return GaussianMarginals(self.means, self.covs, inflation)

    def sample(self, t, n, rng):
        eps = rng.standard_normal((n, self.means.shape[1]))
        return self.means[t] + eps @ self._chols[t].T

    def logpdf(self, t, x):
        x = np.asarray(x, dtype=float)
        chol = self._chols[t]
        d = self.means.shape[1]
        flat = (x - self.means[t]).reshape(-1, d)
        white = solve_triangular(chol, flat.T, lower=True).T
        out = -0.5 * np.sum(white**2, axis=-1) - np.sum(np.log(np.diag(chol))) - 0.5 * d * _LOG_2PI
        return out.reshape(x.shape[:-1])


@dataclass
class FilterResult:
    pred_means: np.ndarray
    pred_covs: np.ndarray
    means: np.ndarray
    covs: np.ndarray
    loglik: float


def _update(m, p, y, H, c, R):
    s = _sym(H @ p @ H.T + R)
    cf = cho_factor(s, lower=True)
    resid = y - H @ m - c
    gain = cho_solve(cf, H @ p).T
    m_new = m + gain @ resid
    ikh = np.eye(p.shape[0]) - gain @ H
    p_new = _regularize(ikh @ p @ ikh.T + gain @ R @ gain.T)
    logdet = 2.0 * np.sum(np.log(np.diag(cf[0])))
    ll = -0.5 * (resid @ cho_solve(cf, resid) + logdet + y.shape[0] * _LOG_2PI)
    return m_new, p_new, ll


def kalman_filter(model):
    """Forward pass with Joseph-form covariance updates."""
    T, d = model.horizon, model.state_dim
    pm = np.empty((T + 1, d))
    pp = np.empty((T + 1, d, d))
    fm = np.empty((T + 1, d))
    fp = np.empty((T + 1, d, d))
    loglik = 0.0
    m, p = model.m0, _sym(model.P0)
    for t in range(T + 1):
        if t:
            F = model.F[t - 1]
            m = F @ fm[t - 1] + model.b[t - 1]
            p = _regularize(F @ fp[t - 1] @ F.T + model.Q[t - 1])
        pm[t], pp[t] = m, p
        fm[t], fp[t], ll = _update(m, p, model.ys[t], model.H[t], model.c[t], model.R[t])
        loglik += ll
    if not np.all(np.isfinite(fm)):
        raise ArithmeticError("Kalman filter produced non-finite means")
    return FilterResult(pm, pp, fm, fp, float(loglik))


def _rts(model, filt):
    T = model.horizon
    sm = filt.means.copy()
    sp = filt.covs.copy()
    for t in range(T - 1, -1, -1):
        F = model.F[t]
        cf = cho_factor(filt.pred_covs[t + 1], lower=True)
        gain = cho_solve(cf, F @ filt.covs[t]).T
        sm[t] = filt.means[t] + gain @ (sm[t + 1] - filt.pred_means[t + 1])
        sp[t] = _regularize(filt.covs[t] + gain @ (sp[t + 1] - filt.pred_covs[t + 1]) @ gain.T)
    return sm, sp


def kalman_smoother(model, inflation=1.0):
    """Exact smoothing marginals and ``log p(y_{0:T})``."""
    filt = kalman_filter(model)
    sm, sp = _rts(model, filt)
    return GaussianMarginals(sm, sp, inflation), filt.loglik


def sample_posterior(model, n, rng):
    """``n`` exact draws from ``p(x_{0:T} | y_{0:T})``, shape ``(T + 1, n, d)``."""
    filt = kalman_filter(model)
    T, d = model.horizon, model.state_dim
    out = np.empty((T + 1, n, d))
    out[T] = filt.means[T] + rng.standard_normal((n, d)) @ np.linalg.cholesky(filt.covs[T]).T
    for t in range(T - 1, -1, -1):
        F = model.F[t]
        cf = cho_factor(filt.pred_covs[t + 1], lower=True)
        gain = cho_solve(cf, F @ filt.covs[t]).T
        cov = _regularize(filt.covs[t] - gain @ F @ filt.covs[t])
        mean = filt.means[t] + (out[t + 1] - filt.pred_means[t + 1]) @ gain.T
        out[t] = mean + rng.standard_normal((n, d)) @ np.linalg.cholesky(cov).T
    return out


def finite_difference_jacobian(fn, x):
    """Central differences with step ``1e-6 * (1 + |x_k|)`` per coordinate."""
    x = np.asarray(x, dtype=float)
    f0 = np.atleast_1d(fn(x))
    jac = np.empty((f0.shape[0], x.shape[0]))
    for k in range(x.shape[0]):
        h = 1e-6 * (1.0 + abs(x[k]))
        e = np.zeros_like(x)
        e[k] = h
        jac[:, k] = (np.atleast_1d(fn(x + e)) - np.atleast_1d(fn(x - e))) / (2.0 * h)
    return jac


@dataclass
class NonlinearGaussianSSM:
    """``x_t = f(t, x_{t-1}) + N(0, Q)``, ``y_t = h(t, x_t) + N(0, R)``, ``x_0 ~ N(m0, P0)``.

    ``f`` and ``h`` act on batches ``(n, d)``. Jacobians ``f_jac(t, x)`` and
    ``h_jac(t, x)`` take a single state; central differences are used when
    they are missing. ``Q`` and ``R`` are fixed over time.
    """

    f: callable
    h: callable
    Q: np.ndarray
    R: np.ndarray
    m0: np.ndarray
    P0: np.ndarray
    ys: np.ndarray
    f_jac: callable = None
    h_jac: callable = None

    def __post_init__(self):
        self.ys = np.asarray(self.ys, dtype=float)
        if self.ys.ndim == 1:
            self.ys = self.ys[:, None]
        self.m0 = np.atleast_1d(np.asarray(self.m0, dtype=float))
        self.P0 = np.atleast_2d(np.asarray(self.P0, dtype=float))
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))

    @property
    def horizon(self):
        return self.ys.shape[0] - 1

    @property
    def state_dim(self):
        return self.m0.shape[0]

    def _transition_jacobian(self, t, x):
        if self.f_jac is not None:
            return np.atleast_2d(self.f_jac(t, x))
        return finite_difference_jacobian(lambda v: self.f(t, v[None])[0], x)

    def _observation_jacobian(self, t, x):
        if self.h_jac is not None:
            return np.atleast_2d(self.h_jac(t, x))
        return finite_difference_jacobian(lambda v: self.h(t, v[None])[0], x)


def _transition_terms(ssm, t, ref):
    F = ssm._transition_jacobian(t, ref)
    b = ssm.f(t, ref[None])[0] - F @ ref
    if not (np.all(np.isfinite(F)) and np.all(np.isfinite(b))):
        raise LinearizationError(f"non-finite transition linearization at t={t}")
    return F, b


def _observation_terms(ssm, t, ref):
    H = ssm._observation_jacobian(t, ref)
    c = ssm.h(t, ref[None])[0] - H @ ref
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(c))):
        raise LinearizationError(f"non-finite observation linearization at t={t}")
    return H, c


def linearize(ssm, reference):
    """First-order Taylor expansion of ``f`` and ``h`` around ``reference[t]``.

    The transition into time t is expanded at ``reference[t - 1]``.
    """
    reference = np.asarray(reference, dtype=float).reshape(ssm.horizon + 1, ssm.state_dim)
    T = ssm.horizon
    F, b = zip(*[_transition_terms(ssm, t, reference[t - 1]) for t in range(1, T + 1)]) if T else ((), ())
    H, c = zip(*[_observation_terms(ssm, t, reference[t]) for t in range(T + 1)])
    d = ssm.state_dim
    return LinearGaussianModel(
        F=np.array(F).reshape(T, d, d),
        b=np.array(b).reshape(T, d),
        Q=np.broadcast_to(ssm.Q, (T, d, d)).copy(),
        H=np.array(H),
        c=np.array(c),
        R=np.broadcast_to(ssm.R, (T + 1,) + ssm.R.shape).copy(),
        m0=ssm.m0,
        P0=ssm.P0,
        ys=ssm.ys,
    )


def _extended_linearization(ssm):
    """Run an extended Kalman filter and return the linear model it implicitly used."""
    T, d = ssm.horizon, ssm.state_dim
    Fs, bs, Hs, cs = [], [], [], []
    m, p = ssm.m0, _sym(ssm.P0)
    for t in range(T + 1):
        if t:
            F, b = _transition_terms(ssm, t, m)
            Fs.append(F)
            bs.append(b)
            m = F @ m + b
            p = _regularize(F @ p @ F.T + ssm.Q)
        H, c = _observation_terms(ssm, t, m)
        Hs.append(H)
        cs.append(c)
        m, p, _ = _update(m, p, ssm.ys[t], H, c, ssm.R)
        if not np.all(np.isfinite(m)):
            raise IterationError("extended filter diverged", 1)
    return LinearGaussianModel(
        F=np.array(Fs).reshape(T, d, d),
        b=np.array(bs).reshape(T, d),
        Q=np.broadcast_to(ssm.Q, (T, d, d)).copy(),
        H=np.array(Hs),
        c=np.array(cs),
        R=np.broadcast_to(ssm.R, (T + 1,) + ssm.R.shape).copy(),
        m0=ssm.m0,
        P0=ssm.P0,
        ys=ssm.ys,
    )


def ieks(ssm, n_iterations, initial=None, ys=None, inflation=1.0):
    """Iterated extended Kalman smoother.

    Without ``initial`` the first iteration is a plain extended smoother
    (linearizing at filter estimates); every later iteration relinearizes
    around the previous smoothed means. With ``initial`` all iterations
    relinearize, starting from ``initial.means``.
    """
    if n_iterations < 1:
        raise InvalidInputError("n_iterations must be at least 1")
    if ys is not None:
        ssm = NonlinearGaussianSSM(ssm.f, ssm.h, ssm.Q, ssm.R, ssm.m0, ssm.P0, ys, ssm.f_jac, ssm.h_jac)
    means = None if initial is None else np.asarray(initial.means, dtype=float)
    marginals = initial
    for it in range(1, n_iterations + 1):
        try:
            lin = _extended_linearization(ssm) if means is None else linearize(ssm, means)
            marginals, _ = kalman_smoother(lin, inflation)
        except (LinearizationError, np.linalg.LinAlgError, ArithmeticError) as exc:
            raise IterationError(f"linearized smoother failed: {exc}", it) from exc
        if not np.all(np.isfinite(marginals.means)):
            raise IterationError("smoothed means are not finite", it)
        means = marginals.means
    return marginals
