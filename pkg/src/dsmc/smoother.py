"""Divide-and-conquer particle smoother.

Leaves hold weighted particle clouds, one per time step. A level-synchronous
schedule over a padded power-of-two grid stitches adjacent blocks by
resampling index pairs from the product-form weights, until a single block of
equally weighted trajectories over ``[0, T]`` remains.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError, InvalidInputError
from .fk import log_init_weight, log_stitch_weight
from .resampling import FunctionPairSource, GaussianPairSource, Resampler
from .rng import Role, SlotStream, StreamKey, derive_stream


@dataclass
class LeafEstimate:
    """Particles at one time step with normalized log-weights and log L_t."""

    t: int
    particles: np.ndarray
    log_weights: np.ndarray
    log_norm_const: float


@dataclass
class BlockEstimate:
    """Trajectories over ``[start, stop]``, time-major ``(stop - start + 1, N, d)``.

    ``log_weights`` is ``None`` once the block has been through a combine
    (equal weights). ``log_norm_const`` is ``None`` when a lazy resampler was
    used anywhere below this block.
    """

    start: int
    stop: int
    trajectories: np.ndarray
    log_norm_const: float = None
    log_weights: np.ndarray = None

    @property
    def span(self):
        return (self.start, self.stop)

    @property
    def n_particles(self):
        return self.trajectories.shape[1]

    def normalized_log_weights(self):
        if self.log_weights is None:
            return np.full(self.n_particles, -math.log(self.n_particles))
        return self.log_weights

    @classmethod
    def from_leaf(cls, leaf):
        return cls(leaf.t, leaf.t, leaf.particles[None], leaf.log_norm_const, leaf.log_weights)


@dataclass(frozen=True)
class CombineStep:
    """Combine ``[left_start, c - 1]`` with ``[c, right_stop]``; ``active`` is False for padding."""

    level: int
    node: int
    left_start: int
    c: int
    right_stop: int
    active: bool


@dataclass
class CombineSchedule:
    padded_size: int
    levels: list

    @property
    def depth(self):
        return len(self.levels)

    def active_steps(self):
        return [[s for s in level if s.active] for level in self.levels]

    def n_combines(self):
        return sum(len(level) for level in self.active_steps())


def build_schedule(horizon):
    """Pair adjacent blocks of width ``2^l`` at level ``l`` over ``2^L >= T + 1`` slots."""
    if horizon < 0:
        raise InvalidInputError("horizon must be nonnegative")
    n = horizon + 1
    depth = (n - 1).bit_length()
    padded = 1 << depth
    levels = []
    for lvl in range(depth):
        width = 1 << lvl
        steps = []
        for node in range(padded // (2 * width)):
            a = 2 * node * width
            c = a + width
            b = c + width - 1
            steps.append(CombineStep(lvl, node, a, c, min(b, horizon), c <= horizon))
        levels.append(steps)
    return CombineSchedule(padded, levels)


@dataclass
class RunMetadata:
    T: int
    N: int
    resampler: str
    levels: int
    weight_evals: int
    wall_time_ms: float
    log_norm_const: float
    seed: int
    biased: bool = False
    extra: dict = field(default_factory=dict)

    def to_record(self):
        record = asdict(self)
        record.update(record.pop("extra"))
        return record


def _logmeanexp(log_w):
    if np.all(np.isneginf(log_w)):
        return -np.inf
    return float(logsumexp(log_w) - math.log(log_w.shape[0]))


def _make_leaf(t, particles, raw_log_w):
    log_l = _logmeanexp(raw_log_w)
    if not np.isfinite(log_l):
        raise DegenerateWeightsError("every leaf weight is zero", (t,))
    log_w = raw_log_w - (log_l + math.log(raw_log_w.shape[0]))
    return LeafEstimate(t, particles, log_w, log_l)


def _leaf_stream(seed, t):
    return derive_stream(StreamKey(seed, 0, t, Role.LEAF_PROPOSAL))


def init_leaves(model, n_particles, seed, workers=1):
    """Draw ``n_particles`` from each q_t and weight them; one leaf per time step."""
    if n_particles < 1:
        raise InvalidInputError("n_particles must be at least 1")

    def one(t):
        x = np.asarray(model.sample_proposal(t, n_particles, _leaf_stream(seed, t)), dtype=float)
        x = x.reshape(n_particles, model.state_dim)
        return _make_leaf(t, x, np.asarray(log_init_weight(model, t, x), dtype=float))

    return _map(one, range(model.horizon + 1), workers)


def pair_source(model, c, x_prev, x_cur, log_w_prev, log_w_cur):
    """Product-form weights for stitching at time ``c``.

    Uses the model's factored Gaussian terms when it has them, otherwise
    evaluates :func:`log_stitch_weight` entry by entry.
    """
    bound = model.log_stitch_bound(c)
    terms = model.stitch_terms(c, x_prev, x_cur)
    if terms is not None:
        mu, z, row, col = terms
        if bound is not None:
            bound = bound + float(np.max(log_w_prev) + np.max(log_w_cur))
        return GaussianPairSource(mu, z, row + log_w_prev, col + log_w_cur, bound)

    def fn(i, j):
        return log_w_prev[i] + log_w_cur[j] + log_stitch_weight(model, c, x_prev[i], x_cur[j])

    if bound is not None:
        bound = bound + float(np.max(log_w_prev) + np.max(log_w_cur))
    return FunctionPairSource(fn, x_prev.shape[0], x_cur.shape[0], bound)


def _combine_log_norm_const(left, right, sample):
    if left.log_norm_const is None or right.log_norm_const is None or sample.log_sum_weight is None:
        return None
    return left.log_norm_const + right.log_norm_const + sample.log_sum_weight


def _check_adjacent(left, right):
    if left.stop + 1 != right.start:
        raise InvalidInputError(f"blocks {left.span} and {right.span} are not adjacent")
    if left.n_particles != right.n_particles:
        raise InvalidInputError("blocks carry different particle counts")


def combine(left, right, model, resampler, stream, node_label=None):
    """Stitch ``left = [a, c-1]`` and ``right = [c, b]`` into ``[a, b]``.

    Returns the combined block and the :class:`PairSample` used.
    """
    _check_adjacent(left, right)
    resampler = Resampler.coerce(resampler)
    c = right.start
    node_label = node_label or (left.start, c, right.stop)
    source = pair_source(
        model, c, left.trajectories[-1], right.trajectories[0],
        left.normalized_log_weights(), right.normalized_log_weights(),
    )
    n = left.n_particles
    sample = resampler.draw(source, n, stream, node=node_label)
    trajectories = np.concatenate(
        [left.trajectories[:, sample.left], right.trajectories[:, sample.right]], axis=0
    )
    block = BlockEstimate(left.start, right.stop, trajectories, _combine_log_norm_const(left, right, sample))
    return block, sample


def _pair_stream(seed, step, resampler):
    key = StreamKey(seed, step.level + 1, step.node, Role.PAIR_RESAMPLE)
    if resampler.lazy:
        return SlotStream.from_key(key)
    return derive_stream(key)


def _map(fn, items, workers):
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _run_schedule(blocks, schedule, combine_fn, workers):
    """Apply ``combine_fn(left, right, step)`` level by level; returns ``(root, samples)``."""
    by_start = {blk.start: blk for blk in blocks}
    samples = []
    for level in schedule.levels:
        active = [s for s in level if s.active]

        def run(step):
            return combine_fn(by_start[step.left_start], by_start[step.c], step)

        results = _map(run, active, workers)
        for step, (block, sample) in zip(active, results):
            del by_start[step.c]
            by_start[step.left_start] = block
            samples.append(sample)
    return by_start[0], samples


def run_dsmc(model, n_particles, resampler="multinomial", seed=0, mh_steps=None, workers=1):
    """Full smoother over ``[0, T]``.

    Returns ``(block, metadata)`` where ``block.trajectories`` holds
    ``n_particles`` equally weighted trajectories.
    """
    resampler = Resampler.coerce(resampler, mh_steps)
    started = time.perf_counter()
    leaves = init_leaves(model, n_particles, seed, workers)
    schedule = build_schedule(model.horizon)

    def step_fn(left, right, step):
        stream = _pair_stream(seed, step, resampler)
        return combine(left, right, model, resampler, stream, (step.left_start, step.c, step.right_stop))

    root, samples = _run_schedule([BlockEstimate.from_leaf(leaf) for leaf in leaves], schedule, step_fn, workers)
    elapsed = (time.perf_counter() - started) * 1e3
    meta = RunMetadata(
        T=model.horizon,
        N=n_particles,
        resampler=resampler.kind,
        levels=schedule.depth,
        weight_evals=sum(s.evaluations for s in samples),
        wall_time_ms=elapsed,
        log_norm_const=root.log_norm_const,
        seed=seed,
        biased=any(s.biased for s in samples),
    )
    if root.log_weights is not None:
        # T = 0: resample the single leaf so the output is equally weighted
        rng = _pair_stream(seed, CombineStep(0, 0, 0, 0, 0, True), Resampler("multinomial"))
        idx = rng.choice(n_particles, size=n_particles, p=np.exp(root.log_weights))
        root = BlockEstimate(0, 0, root.trajectories[:, idx], root.log_norm_const)
    return root, meta


def estimate(block, test_function):
    """Average of ``test_function`` over the block's trajectories.

    ``test_function`` receives one trajectory of shape ``(length, d)`` at a
    time unless it has a ``vectorized`` attribute set, in which case it gets
    the full ``(length, N, d)`` array and returns ``N`` values.
    """
    if getattr(test_function, "vectorized", False):
        values = np.asarray(test_function(block.trajectories), dtype=float)
    else:
        values = np.array([test_function(block.trajectories[:, n]) for n in range(block.n_particles)], dtype=float)
    if np.all(values == values[0]):
        return float(values[0])  # a mean of equal floats can drift by one ulp
    if block.log_weights is not None:
        return float(np.sum(np.exp(block.log_weights) * values))
    return float(np.mean(values))
