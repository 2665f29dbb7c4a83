"""Sequential baselines: particle filter and forward-filtering backward-sampling."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .errors import DegenerateWeightsError, InvalidInputError
from .fk import log_init_weight
from .rng import Role, StreamKey, derive_stream


@dataclass
class FilterOutput:
    """Per-time particles ``(T + 1, N, d)``, normalized log-weights ``(T + 1, N)``,
    ancestors ``(T, N)`` (``ancestors[t - 1]`` indexes time ``t - 1``) and log-likelihood."""

    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    loglik: float
    proposal: str


def _resample(log_w, n, rng, scheme):
    w = np.exp(log_w - log_w.max())
    cdf = np.cumsum(w)
    cdf /= cdf[-1]
    if scheme == "systematic":
        u = (rng.random() + np.arange(n)) / n
    elif scheme == "multinomial":
        u = rng.random(n)
    else:
        raise InvalidInputError(f"unknown filter resampler {scheme!r}")
    return np.minimum(np.searchsorted(cdf, u, side="right"), n - 1)


def _normalize(raw, t):
    total = logsumexp(raw) if not np.all(np.isneginf(raw)) else -np.inf
    if not np.isfinite(total):
        raise DegenerateWeightsError("every filter weight is zero", (t,))
    return raw - total, float(total - math.log(raw.shape[0]))


def particle_filter(model, n_particles, resampler="multinomial", seed=0, proposal=None):
    """Resample-every-step particle filter.

    ``proposal="bootstrap"`` moves particles with the transition kernel and
    weights by the potential; ``proposal="model"`` draws from the model's q_t
    and weights by ``p_t h_t / q_t``. The default is bootstrap when the model
    can sample its transitions.
    """
    if n_particles < 1:
        raise InvalidInputError("n_particles must be at least 1")
    if proposal is None:
        proposal = "bootstrap" if hasattr(model, "transition_mean") else "model"
    T, d, n = model.horizon, model.state_dim, n_particles
    rng = derive_stream(StreamKey(seed, 0, 0, Role.FILTER))
    particles = np.empty((T + 1, n, d))
    log_weights = np.empty((T + 1, n))
    ancestors = np.empty((T, n), dtype=np.int64)

    if proposal == "bootstrap":
        x = model.sample_init(n, rng).reshape(n, d)
        raw = np.asarray(model.log_potential(0, x), dtype=float)
    else:
        x = model.sample_proposal(0, n, rng).reshape(n, d)
        raw = np.asarray(log_init_weight(model, 0, x), dtype=float)
    particles[0] = x
    log_weights[0], loglik = _normalize(raw, 0)

    for t in range(1, T + 1):
        a = _resample(log_weights[t - 1], n, rng, resampler)
        ancestors[t - 1] = a
        x_prev = particles[t - 1, a]
        if proposal == "bootstrap":
            x = model.sample_transition(t, x_prev, rng).reshape(n, d)
            raw = np.asarray(model.log_potential(t, x), dtype=float)
        else:
            x = model.sample_proposal(t, n, rng).reshape(n, d)
            log_p = model.transition_logdensity(t, x_prev, x)
            raw = np.where(np.isneginf(log_p), -np.inf,
                           log_p + model.log_potential(t, x) - model.proposal_logdensity(t, x))
        particles[t] = x
        log_weights[t], inc = _normalize(raw, t)
        loglik += inc
    return FilterOutput(particles, log_weights, ancestors, float(loglik), proposal)


@dataclass
class FFBSResult:
    trajectories: np.ndarray
    evaluations: int


def _sample_rows(log_w, rng):
    """One categorical draw per row of a ``(B, N)`` log-weight table."""
    m = np.max(log_w, axis=1, keepdims=True)
    if np.any(np.isneginf(m)):
        raise DegenerateWeightsError("every backward weight is zero")
    w = np.exp(log_w - m)
    cdf = np.cumsum(w, axis=1)
    u = rng.random(log_w.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, log_w.shape[1] - 1)


def _backward_gaussian(model, t, filt, nxt, rng):
    """Draw ancestor indices at time t for states ``nxt`` at t + 1 (Gaussian transitions)."""
    x_t = filt.particles[t]
    mu, z, _ = model.transition_terms(t + 1, x_t, nxt)
    n_draws, n = nxt.shape[0], x_t.shape[0]
    col = filt.log_weights[t]
    row = np.zeros(n_draws)
    out = np.empty((n_draws, n))
    block_sums = np.empty((n_draws, kernels.n_blocks(n)))
    shift = float(np.max(col))
    rowsums = kernels.pair_weights_gaussian(z, mu, row, col, shift, out, block_sums)
    idx = np.empty(n_draws, dtype=np.int64)
    ok = rowsums > 1e-250
    if np.any(ok):
        rows = np.flatnonzero(ok)
        resid = rng.random(rows.size) * rowsums[rows] * (1.0 - 1e-15)
        idx[rows] = kernels.search_columns(out, block_sums, rows, resid)
    if not np.all(ok):
        bad = np.flatnonzero(~ok)
        diff = z[bad][:, None, :] - mu[None, :, :]
        idx[bad] = _sample_rows(col[None, :] - 0.5 * np.sum(diff**2, axis=-1), rng)
    return idx


def ffbs_sample(filt, model, n_draws, seed=0, chunk=4096):
    """Backward-sample ``n_draws`` trajectories from a :class:`FilterOutput`.

    Returns an :class:`FFBSResult` with trajectories ``(T + 1, n_draws, d)``
    and the number of transition densities evaluated (``T * N * n_draws``).
    """
    rng = derive_stream(StreamKey(seed, 0, 0, Role.BACKWARD))
    T = filt.particles.shape[0] - 1
    n, d = filt.particles.shape[1], filt.particles.shape[2]
    out = np.empty((T + 1, n_draws, d))
    final = np.exp(filt.log_weights[T] - logsumexp(filt.log_weights[T]))
    last = rng.choice(n, size=n_draws, p=final / final.sum())
    out[T] = filt.particles[T, last]
    gaussian = hasattr(model, "transition_terms")
    for t in range(T - 1, -1, -1):
        for lo in range(0, n_draws, chunk):
            hi = min(lo + chunk, n_draws)
            nxt = out[t + 1, lo:hi]
            if gaussian:
                idx = _backward_gaussian(model, t, filt, nxt, rng)
            else:
                log_p = _transition_table(model, t + 1, filt.particles[t], nxt)
                idx = _sample_rows(filt.log_weights[t][None, :] + log_p, rng)
            out[t, lo:hi] = filt.particles[t, idx]
    return FFBSResult(out, T * n * n_draws)


def _transition_table(model, t, x_prev, x_next):
    """``log p_t(x_next[b] | x_prev[j])`` as a ``(B, N)`` table."""
    return np.asarray(model.transition_logdensity(t, x_prev[None, :, :], x_next[:, None, :]), dtype=float)

