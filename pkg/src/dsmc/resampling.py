"""Drawing index pairs from an N x N product-form weight matrix.

Dense resamplers materialize the whole matrix once per call (exponentiated,
shifted, with per-block sums) and also return its log-sum. Lazy resamplers
query single entries and keep only O(n_out) state.
"""

import contextlib
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigurationError, DegenerateWeightsError, InvalidInputError
from .rng import SlotStream

RESAMPLERS = ("multinomial", "systematic", "mh-lazy", "rejection-lazy")
LAZY_RESAMPLERS = ("mh-lazy", "rejection-lazy")
CONDITIONAL_RESAMPLERS = ("multinomial", "rejection-lazy")

# Below this the shifted total may have lost too much to underflow; redo with the exact max.
_UNDERFLOW_TOTAL = 1e-280

_trackers = []
_trackers_lock = threading.Lock()


@contextlib.contextmanager
def track_weight_buffers():
    """Record the size (in entries) of every weight buffer allocated inside the block.

    Yields a list of ``(kind, n_entries)`` tuples, ``kind`` being ``"dense"``
    for N x N matrices and ``"lazy"`` for per-round lazy batches.
    """
    record = []
    with _trackers_lock:
        _trackers.append(record)
    try:
        yield record
    finally:
        with _trackers_lock:
            _trackers.remove(record)


def _note_buffer(kind, n_entries):
    if _trackers:
        with _trackers_lock:
            for record in _trackers:
                record.append((kind, int(n_entries)))


_workspace = threading.local()


def _weight_buffer(n_rows, n_cols):
    """One dense weight buffer per call, backed by a per-thread reusable workspace.

    Reuse avoids first-touch page faults on a fresh N^2 allocation at every
    combine; the contract (one N^2 buffer per combine) is what gets recorded.
    """
    _note_buffer("dense", n_rows * n_cols)
    size = n_rows * n_cols
    nb = kernels.n_blocks(n_cols)
    store = getattr(_workspace, "store", None)
    if store is None or store[0].size < size or store[1].size < n_rows * nb:
        store = (np.empty(size), np.empty(n_rows * nb))
        _workspace.store = store
    return store[0][:size].reshape(n_rows, n_cols), store[1][: n_rows * nb].reshape(n_rows, nb)


def release_workspace():
    """Drop this thread's cached weight buffer."""
    _workspace.store = None


class PairWeightSource:
    """Unnormalized log weights ``log_weight_at(i, j)`` on an ``n_rows x n_cols`` grid.

    ``log_upper_bound`` (optional) dominates every entry. ``evaluations``
    counts entries computed so far, whether singly or by :meth:`fill_dense`.
    """

    log_upper_bound = None

    def __init__(self, n_rows, n_cols=None):
        self.n_rows = int(n_rows)
        self.n_cols = int(n_rows if n_cols is None else n_cols)
        self.evaluations = 0

    @property
    def n_particles(self):
        return self.n_rows

    def log_weight_at(self, i, j):
        i = np.asarray(i, dtype=np.int64)
        j = np.asarray(j, dtype=np.int64)
        self.evaluations += int(np.broadcast(i, j).size)
        return self._entries(i, j)

    def _entries(self, i, j):
        raise NotImplementedError

    def fill_dense(self, out, block_sums):
        """Write ``exp(log_weight - shift)`` into ``out``; returns ``(row_sums, shift)``."""
        self.evaluations += self.n_rows * self.n_cols
        for lo in range(0, self.n_rows, 256):
            hi = min(lo + 256, self.n_rows)
            out[lo:hi] = self._entries(np.arange(lo, hi)[:, None], np.arange(self.n_cols)[None, :])
        finite = out[np.isfinite(out)]
        shift = float(finite.max()) if finite.size else 0.0
        if np.any(np.isposinf(out)) or np.any(np.isnan(out)):
            raise InvalidInputError("log weights must be finite or -inf")
        return kernels.exp_weights_inplace(out, shift, block_sums), shift


class DensePairSource(PairWeightSource):
    """Source backed by an explicit log-weight matrix."""

    def __init__(self, log_weights, log_upper_bound=None):
        log_weights = np.asarray(log_weights, dtype=float)
        super().__init__(*log_weights.shape)
        self.log_weights = log_weights
        self.log_upper_bound = log_upper_bound

    def _entries(self, i, j):
        return self.log_weights[i, j]


class FunctionPairSource(PairWeightSource):
    """Source evaluating ``fn(i, j)`` (vectorized over index arrays)."""

    def __init__(self, fn, n_rows, n_cols=None, log_upper_bound=None):
        super().__init__(n_rows, n_cols)
        self.fn = fn
        self.log_upper_bound = log_upper_bound

    def _entries(self, i, j):
        i, j = np.broadcast_arrays(i, j)
        return np.asarray(self.fn(i, j), dtype=float)


class GaussianPairSource(PairWeightSource):
    """``log w(i, j) = row[i] + col[j] - |z[j] - mu[i]|^2 / 2``.

    The quadratic term is non-positive, so ``max(row) + max(col)`` is always an
    upper bound; a tighter one may be passed in.
    """

    def __init__(self, mu, z, row, col, log_upper_bound=None):
        self.mu = np.ascontiguousarray(mu, dtype=float)
        self.z = np.ascontiguousarray(z, dtype=float)
        self.row = np.ascontiguousarray(row, dtype=float)
        self.col = np.ascontiguousarray(col, dtype=float)
        super().__init__(self.mu.shape[0], self.z.shape[0])
        if np.any(np.isnan(self.row)) or np.any(np.isnan(self.col)) or np.any(np.isposinf(self.col)):
            raise InvalidInputError("row and column terms must be finite or -inf")
        structural = float(np.max(self.row) + np.max(self.col))
        self.log_upper_bound = structural if log_upper_bound is None else min(structural, float(log_upper_bound))

    def _entries(self, i, j):
        diff = self.z[j] - self.mu[i]
        return self.row[i] + self.col[j] - 0.5 * np.sum(diff * diff, axis=-1)

    def fill_dense(self, out, block_sums):
        self.evaluations += self.n_rows * self.n_cols
        shift = float(np.max(self.row) + np.max(self.col))
        if not np.isfinite(shift):
            out.fill(0.0)
            block_sums.fill(0.0)
            return np.zeros(self.n_rows), 0.0
        rowsums = kernels.pair_weights_gaussian(self.mu, self.z, self.row, self.col, shift, out, block_sums)
        if rowsums.sum() < _UNDERFLOW_TOTAL:
            shift = kernels.pair_logmax_gaussian(self.mu, self.z, self.row, self.col)
            if np.isfinite(shift):
                rowsums = kernels.pair_weights_gaussian(self.mu, self.z, self.row, self.col, shift, out, block_sums)
        return rowsums, shift


@dataclass
class PairSample:
    """Drawn index pairs and, for dense resamplers, the log of the weight total.

    ``log_sum_weight`` is ``log sum_ij w(i, j)`` and ``log_mean_weight`` the
    same divided by ``n_rows * n_cols``; both are ``None`` for lazy variants.
    """

    left: np.ndarray
    right: np.ndarray
    log_sum_weight: float = None
    log_mean_weight: float = None
    biased: bool = False
    evaluations: int = 0


def _dense_pairs(source, n_out, rng, systematic, node):
    out, block_sums = _weight_buffer(source.n_rows, source.n_cols)
    rowsums, shift = source.fill_dense(out, block_sums)
    total = float(np.sum(rowsums))
    if not total > 0.0 or not np.isfinite(total):
        raise DegenerateWeightsError("all pair weights are zero", node)
    cdf = np.cumsum(rowsums)
    total = cdf[-1]
    if systematic:
        targets = (rng.random() + np.arange(n_out)) * (total / n_out)
    else:
        targets = rng.random(n_out) * total
    rows = np.minimum(np.searchsorted(cdf, targets, side="right"), source.n_rows - 1)
    empty = rowsums[rows] <= 0.0
    if np.any(empty):
        positive = np.flatnonzero(rowsums > 0.0)
        rows[empty] = positive[np.minimum(np.searchsorted(positive, rows[empty]), positive.size - 1)]
    residual = np.clip(targets - (cdf[rows] - rowsums[rows]), 0.0, None)
    residual = np.minimum(residual, rowsums[rows] * (1.0 - 1e-15))
    cols = kernels.search_columns(out, block_sums, rows, residual)
    log_sum = float(np.log(total) + shift)
    return PairSample(
        left=rows.astype(np.int64),
        right=np.asarray(cols, dtype=np.int64),
        log_sum_weight=log_sum,
        log_mean_weight=log_sum - np.log(source.n_rows) - np.log(source.n_cols),
        evaluations=source.n_rows * source.n_cols,
    )


def multinomial_pairs(source, n_out, rng, node=None):
    """``n_out`` i.i.d. draws from the normalized weight matrix."""
    return _dense_pairs(source, int(n_out), rng, False, node)


def systematic_pairs(source, n_out, rng, node=None):
    """Systematic resampling over the row-major flattened matrix (one uniform)."""
    return _dense_pairs(source, int(n_out), rng, True, node)


def _slot_stream(stream):
    return stream if isinstance(stream, SlotStream) else SlotStream.from_generator(stream)


def _uniform_index(u, n):
    return np.minimum((u * n).astype(np.int64), n - 1)


def mh_lazy_pairs(source, n_out, n_steps, stream, node=None, slot_offset=0):
    """Independent ``n_steps``-step Metropolis chains, one per output slot.

    Slot ``m`` starts at ``(m, m)`` (indices wrap if ``n_out`` exceeds the
    grid) and proposes uniform pairs. The result is only approximately
    distributed as the normalized weights, hence ``biased=True``.
    """
    n_steps = int(n_steps)
    if n_steps < 0:
        raise ConfigurationError("mh-lazy needs a nonnegative number of steps")
    slots = np.arange(n_out, dtype=np.int64) + int(slot_offset)
    ss = _slot_stream(stream)
    before = source.evaluations
    _note_buffer("lazy", n_out)
    left = slots % source.n_rows
    right = slots % source.n_cols
    current = source.log_weight_at(left, right) if n_steps else None
    for step in range(n_steps):
        base = np.uint64(3 * step)
        u_i = ss.uniforms(slots, base)
        u_j = ss.uniforms(slots, base + np.uint64(1))
        u_acc = ss.uniforms(slots, base + np.uint64(2))
        prop_i = _uniform_index(u_i, source.n_rows)
        prop_j = _uniform_index(u_j, source.n_cols)
        proposed = source.log_weight_at(prop_i, prop_j)
        with np.errstate(invalid="ignore"):
            accept = np.log(u_acc) < proposed - current
        accept |= np.isneginf(current) & ~np.isneginf(proposed)
        left = np.where(accept, prop_i, left)
        right = np.where(accept, prop_j, right)
        current = np.where(accept, proposed, current)
    if n_steps and np.all(np.isneginf(current)):
        raise DegenerateWeightsError("every MH chain ended on a zero-weight pair", node)
    return PairSample(left=left, right=right, biased=True, evaluations=source.evaluations - before)


def rejection_lazy_pairs(source, n_out, stream, node=None, slot_offset=0, max_rounds=None):
    """Exact draws by rejection from uniform pair proposals.

    Each slot proposes ``(I, J)`` uniformly and accepts with probability
    ``exp(log_weight_at(I, J) - log_upper_bound)``, redrawing the acceptance
    uniform on every attempt. Work is done in rounds over unfinished slots.
    """
    bound = source.log_upper_bound
    if bound is None or not np.isfinite(bound):
        raise ConfigurationError("rejection-lazy resampling needs a finite log_upper_bound")
    slots = np.arange(n_out, dtype=np.int64) + int(slot_offset)
    ss = _slot_stream(stream)
    before = source.evaluations
    left = np.empty(n_out, dtype=np.int64)
    right = np.empty(n_out, dtype=np.int64)
    active = np.arange(n_out)
    attempt = 0
    if max_rounds is None:
        max_rounds = max(10_000, 200 * source.n_rows * source.n_cols)
    while active.size:
        if attempt >= max_rounds:
            raise DegenerateWeightsError(f"rejection sampler gave up after {attempt} rounds", node)
        _note_buffer("lazy", active.size)
        s = slots[active]
        base = np.uint64(3 * attempt)
        prop_i = _uniform_index(ss.uniforms(s, base), source.n_rows)
        prop_j = _uniform_index(ss.uniforms(s, base + np.uint64(1)), source.n_cols)
        logw = source.log_weight_at(prop_i, prop_j)
        if np.any(logw > bound + 1e-9 * max(1.0, abs(bound))):
            raise ConfigurationError("log_upper_bound is exceeded by a weight")
        accept = np.log(ss.uniforms(s, base + np.uint64(2))) < logw - bound
        done = active[accept]
        left[done] = prop_i[accept]
        right[done] = prop_j[accept]
        active = active[~accept]
        attempt += 1
    return PairSample(left=left, right=right, evaluations=source.evaluations - before)


@dataclass(frozen=True)
class Resampler:
    """Resampler choice; ``mh_steps`` only matters for ``mh-lazy``."""

    kind: str = "multinomial"
    mh_steps: int = 10

    def __post_init__(self):
        if self.kind not in RESAMPLERS:
            raise ConfigurationError(f"unknown resampler {self.kind!r}; choose from {RESAMPLERS}")

    @classmethod
    def coerce(cls, value, mh_steps=None):
        if isinstance(value, cls):
            return value if mh_steps is None else cls(value.kind, mh_steps)
        return cls(value, 10 if mh_steps is None else mh_steps)

    @property
    def lazy(self):
        return self.kind in LAZY_RESAMPLERS

    def draw(self, source, n_out, rng, node=None, slot_offset=0):
        if self.kind == "multinomial":
            return multinomial_pairs(source, n_out, rng, node)
        if self.kind == "systematic":
            return systematic_pairs(source, n_out, rng, node)
        if self.kind == "mh-lazy":
            return mh_lazy_pairs(source, n_out, self.mh_steps, rng, node, slot_offset)
        return rejection_lazy_pairs(source, n_out, rng, node, slot_offset)
