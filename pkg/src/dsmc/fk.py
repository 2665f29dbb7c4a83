"""Feynman-Kac model interface and the two importance weights used by dSMC.

States are batches of shape ``(n, d)``. Every log-density takes a batch and
returns shape ``(n,)``; ``transition_logdensity`` broadcasts over leading axes
so that ``(n, 1, d)`` against ``(1, m, d)`` yields an ``(n, m)`` table.
"""

from abc import ABC, abstractmethod

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DominationError, InvalidInputError

_LOG_2PI = np.log(2.0 * np.pi)


class FeynmanKacModel(ABC):
    """Initial law, transition kernels, potentials, auxiliary measures and proposals.

    Subclasses provide samplers and log-densities w.r.t. Lebesgue measure.
    ``aux_logdensity(t, .)`` is the density of the auxiliary measure nu_t and
    ``proposal_logdensity(t, .)`` that of the leaf proposal q_t.

    Two optional hooks speed up the stitching step:

    ``stitch_terms(c, x_prev, x_cur)``
        returns ``(mu, z, row, col)`` with
        ``log omega_c(x_prev[i], x_cur[j]) = row[i] + col[j] - |z[j] - mu[i]|^2 / 2``.
    ``log_stitch_bound(c)``
        an upper bound on ``log omega_c`` over its whole domain.
    """

    state_dim: int
    horizon: int

    @abstractmethod
    def sample_init(self, n, rng):
        """Draw ``n`` states from the initial law."""

    @abstractmethod
    def init_logdensity(self, x):
        """Log-density of the initial law."""

    @abstractmethod
    def transition_logdensity(self, t, x_prev, x_cur):
        """Log p_t(x_cur | x_prev), broadcasting over leading axes."""

    @abstractmethod
    def log_potential(self, t, x):
        """Log h_t(x); may be ``-inf``."""

    @abstractmethod
    def aux_logdensity(self, t, x):
        """Log-density of nu_t."""

    @abstractmethod
    def sample_proposal(self, t, n, rng):
        """Draw ``n`` states from q_t."""

    @abstractmethod
    def proposal_logdensity(self, t, x):
        """Log-density of q_t."""

    def sample_transition(self, t, x_prev, rng):
        raise NotImplementedError(f"{type(self).__name__} cannot sample its transitions")

    def stitch_terms(self, c, x_prev, x_cur):
        return None

    def log_stitch_bound(self, c):
        return None


class GaussianTransitionFK(FeynmanKacModel):
    """Model with ``x_t | x_{t-1} ~ N(transition_mean(t, x_{t-1}), Q_t)``.

    Subclasses implement ``transition_mean`` and ``transition_chol`` (the lower
    Cholesky factor of Q_t); the transition density, transition sampler and
    the factored stitch terms come for free.
    """

    @abstractmethod
    def transition_mean(self, t, x_prev):
        """Mean of x_t given a batch ``x_prev`` of shape ``(..., d)``."""

    @abstractmethod
    def transition_chol(self, t):
        """Lower Cholesky factor of the transition covariance at time t."""

    def _standardize(self, t, v):
        chol = self.transition_chol(t)
        flat = v.reshape(-1, self.state_dim)
        out = solve_triangular(chol, flat.T, lower=True).T
        return out.reshape(v.shape), np.sum(np.log(np.diag(chol)))

    def transition_logdensity(self, t, x_prev, x_cur):
        resid = np.asarray(x_cur, dtype=float) - self.transition_mean(t, np.asarray(x_prev, dtype=float))
        white, half_logdet = self._standardize(t, resid)
        return -0.5 * np.sum(white**2, axis=-1) - half_logdet - 0.5 * self.state_dim * _LOG_2PI

    def sample_transition(self, t, x_prev, rng):
        mean = self.transition_mean(t, x_prev)
        noise = rng.standard_normal(mean.shape)
        return mean + noise @ self.transition_chol(t).T

    def transition_terms(self, t, x_prev, x_cur):
        """``(mu, z, log_const)`` with ``log p_t(x_cur[j] | x_prev[i]) = log_const - |z[j] - mu[i]|^2 / 2``."""
        mu, half_logdet = self._standardize(t, self.transition_mean(t, x_prev))
        z, _ = self._standardize(t, x_cur)
        return mu, z, -half_logdet - 0.5 * self.state_dim * _LOG_2PI

    def stitch_terms(self, c, x_prev, x_cur):
        mu, z, log_const = self.transition_terms(c, x_prev, x_cur)
        col = _potential_minus_aux(self, c, x_cur) + log_const
        return mu, z, np.zeros(mu.shape[0]), col


def _check_states(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidInputError(f"{name} has non-finite coordinates")
    return x


def _potential_minus_aux(model, t, x):
    """``log h_t(x) - log nu_t(x)`` with ``0 / 0 := 0`` and domination checks."""
    log_h = np.asarray(model.log_potential(t, x), dtype=float)
    log_nu = np.asarray(model.aux_logdensity(t, x), dtype=float)
    out = np.where(np.isneginf(log_h), -np.inf, log_h - np.where(np.isneginf(log_nu), 0.0, log_nu))
    bad = np.isneginf(log_nu) & ~np.isneginf(log_h)
    if np.any(bad):
        raise DominationError(f"auxiliary density vanishes at a state with positive potential (t={t})")
    return out


def log_stitch_weight(model, c, x_prev, x_cur):
    """Log omega_c = log p_c(x_cur | x_prev) + log h_c(x_cur) - log nu_c(x_cur).

    ``x_prev`` and ``x_cur`` broadcast against each other over leading axes;
    the trailing axis is the state dimension.
    """
    if not 1 <= c <= model.horizon:
        raise InvalidInputError(f"stitch time {c} outside 1..{model.horizon}")
    x_prev = _check_states(x_prev, "x_prev")
    x_cur = _check_states(x_cur, "x_cur")
    log_p = np.asarray(model.transition_logdensity(c, x_prev, x_cur), dtype=float)
    shape = log_p.shape
    flat_cur = np.broadcast_to(x_cur, shape + (model.state_dim,)).reshape(-1, model.state_dim)
    log_h = np.asarray(model.log_potential(c, flat_cur), dtype=float).reshape(shape)
    log_nu = np.asarray(model.aux_logdensity(c, flat_cur), dtype=float).reshape(shape)
    if np.any(np.isneginf(log_nu) & np.isfinite(log_p) & ~np.isneginf(log_h)):
        raise DominationError(f"auxiliary density vanishes where the transition density is positive (c={c})")
    zero = np.isneginf(log_p) | np.isneginf(log_h)
    with np.errstate(invalid="ignore"):
        out = np.where(zero, -np.inf, log_p + log_h - log_nu)
    return out if out.ndim else float(out)


def log_init_weight(model, t, x):
    """Leaf weight: ``log h_0 + log P_0 - log q_0`` at t = 0, ``log nu_t - log q_t`` after."""
    if not 0 <= t <= model.horizon:
        raise InvalidInputError(f"time {t} outside 0..{model.horizon}")
    x = _check_states(x, "x")
    squeeze = x.ndim == 1
    x = np.atleast_2d(x)
    log_q = np.asarray(model.proposal_logdensity(t, x), dtype=float)
    if t == 0:
        num = np.asarray(model.log_potential(0, x), dtype=float) + np.asarray(model.init_logdensity(x), dtype=float)
    else:
        num = np.asarray(model.aux_logdensity(t, x), dtype=float)
    with np.errstate(invalid="ignore"):
        out = np.where(np.isneginf(num), -np.inf, num - log_q)
    if np.any(np.isnan(out) | np.isposinf(out)):
        raise DominationError(f"proposal density vanishes where the target does not (t={t})")
    return float(out[0]) if squeeze else out
