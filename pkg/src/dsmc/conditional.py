"""Conditional dSMC and a particle Gibbs driver built on it.

The reference ("star") trajectory occupies slot 0 of every leaf and every
stitched block; the remaining slots are resampled from the full product-form
weights. The new star is a uniform pick among the final trajectories.
"""

import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InvalidReferenceError
from .fk import log_init_weight
from .gaussian import ieks
from .resampling import CONDITIONAL_RESAMPLERS, Resampler
from .rng import Role, SlotStream, StreamKey, derive_stream, replicate_seed
from .smoother import (
    BlockEstimate,
    _combine_log_norm_const,
    _check_adjacent,
    _leaf_stream,
    _make_leaf,
    _map,
    _run_schedule,
    build_schedule,
    pair_source,
)


def _conditional_resampler(resampler):
    resampler = Resampler.coerce(resampler)
    if resampler.kind not in CONDITIONAL_RESAMPLERS:
        raise ConfigurationError(
            f"conditional runs support {CONDITIONAL_RESAMPLERS}, not {resampler.kind!r}"
        )
    return resampler


def _check_star(model, star):
    star = np.asarray(star, dtype=float).reshape(model.horizon + 1, model.state_dim)
    if not np.all(np.isfinite(star)):
        raise InvalidReferenceError("star trajectory has non-finite coordinates")
    return star


def conditional_init_leaves(model, n_particles, star, seed, workers=1):
    """Leaves with ``star[t]`` in slot 0 and ``n_particles - 1`` proposal draws after it."""
    if n_particles < 2:
        raise ConfigurationError("conditional runs need at least 2 particles")
    star = _check_star(model, star)

    def one(t):
        if not np.isfinite(model.proposal_logdensity(t, star[t : t + 1])[0]):
            raise InvalidReferenceError(f"star lies outside the proposal support at t={t}")
        fresh = np.asarray(model.sample_proposal(t, n_particles - 1, _leaf_stream(seed, t)), dtype=float)
        x = np.concatenate([star[t : t + 1], fresh.reshape(n_particles - 1, model.state_dim)])
        return _make_leaf(t, x, np.asarray(log_init_weight(model, t, x), dtype=float))

    return _map(one, range(model.horizon + 1), workers)


def conditional_combine(left, right, model, stream, resampler="multinomial", node_label=None):
    """Stitch two blocks keeping slot 0 as the concatenated star segments."""
    _check_adjacent(left, right)
    resampler = _conditional_resampler(resampler)
    c = right.start
    node_label = node_label or (left.start, c, right.stop)
    source = pair_source(
        model, c, left.trajectories[-1], right.trajectories[0],
        left.normalized_log_weights(), right.normalized_log_weights(),
    )
    n = left.n_particles
    sample = resampler.draw(source, n - 1, stream, node=node_label, slot_offset=1)
    li = np.concatenate([[0], sample.left])
    ri = np.concatenate([[0], sample.right])
    trajectories = np.concatenate([left.trajectories[:, li], right.trajectories[:, ri]], axis=0)
    block = BlockEstimate(left.start, right.stop, trajectories, _combine_log_norm_const(left, right, sample))
    return block, sample


def run_cdsmc(model, n_particles, star, seed, resampler="multinomial", workers=1):
    """One conditional sweep; returns ``(new_star, block)``."""
    resampler = _conditional_resampler(resampler)
    leaves = conditional_init_leaves(model, n_particles, star, seed, workers)
    schedule = build_schedule(model.horizon)

    def step_fn(left, right, step):
        key = StreamKey(seed, step.level + 1, step.node, Role.PAIR_RESAMPLE)
        stream = SlotStream.from_key(key) if resampler.lazy else derive_stream(key)
        return conditional_combine(left, right, model, stream, resampler, (step.left_start, step.c, step.right_stop))

    root, _ = _run_schedule([BlockEstimate.from_leaf(leaf) for leaf in leaves], schedule, step_fn, workers)
    pick_rng = derive_stream(StreamKey(seed, 0, 0, Role.STAR_SELECT))
    if root.log_weights is not None:
        k = int(pick_rng.choice(n_particles, p=np.exp(root.log_weights)))
    else:
        k = int(pick_rng.integers(n_particles))
    return root.trajectories[:, k].copy(), root


@dataclass
class GibbsState:
    """Current parameter, star trajectory and (optionally) cached Gaussian marginals."""

    theta: object
    star: np.ndarray
    proposal_cache: object = None
    sweep: int = 0


@dataclass
class SweepRecord:
    sweep: int
    theta: object
    star: np.ndarray
    changed: np.ndarray
    wall_time_ms: float


def pgibbs_sweep(state, model_builder, param_kernel, seed, n_particles, ssm_builder=None,
                 resampler="multinomial", workers=1):
    """One particle Gibbs sweep: parameter update, proposal refresh, then c-dSMC.

    ``model_builder(theta, proposal_cache)`` must return a Feynman-Kac model.
    When ``ssm_builder(theta)`` is given and the state holds a proposal cache,
    the cache is refreshed by a single warm-started IEKS iteration; otherwise
    the cache is passed through unchanged (``None`` meaning the builder's
    static proposals). Exceptions propagate and leave ``state`` untouched.
    """
    rng = derive_stream(StreamKey(seed, 0, state.sweep, Role.GIBBS_PARAM))
    theta = param_kernel(state.theta, state.star, rng)
    cache = state.proposal_cache
    if ssm_builder is not None and cache is not None:
        cache = ieks(ssm_builder(theta), 1, initial=cache, inflation=cache.inflation)
    model = model_builder(theta, cache)
    new_star, _ = run_cdsmc(model, n_particles, state.star, seed, resampler, workers)
    return GibbsState(theta, new_star, cache, state.sweep + 1)


def run_pgibbs(state, model_builder, param_kernel, n_sweeps, seed, n_particles, ssm_builder=None,
               resampler="multinomial", workers=1, callback=None):
    """Run ``n_sweeps`` sweeps; returns ``(final_state, records)``.

    Each sweep ``k`` uses the replicate seed derived from ``(seed, k)`` so
    chains are reproducible sweep by sweep.
    """
    records = []
    for _ in range(n_sweeps):
        started = time.perf_counter()
        new = pgibbs_sweep(state, model_builder, param_kernel, replicate_seed(seed, state.sweep),
                           n_particles, ssm_builder, resampler, workers)
        changed = np.any(new.star != state.star, axis=-1)
        rec = SweepRecord(new.sweep, new.theta, new.star, changed, (time.perf_counter() - started) * 1e3)
        records.append(rec)
        if callback is not None:
            callback(rec)
        state = new
    return state, records


def update_rate(chain):
    """Per-time fraction of consecutive stars that differ, from a ``(S, T + 1[, d])`` chain."""
    chain = np.asarray(chain, dtype=float)
    if chain.shape[0] < 2:
        raise ValueError("need at least two stars")
    if chain.ndim == 3:
        changed = np.any(chain[1:] != chain[:-1], axis=-1)
    else:
        changed = chain[1:] != chain[:-1]
    return changed.mean(axis=0)
