"""Hot numeric kernels, each with a numba and a pure-numpy implementation.

Dense pair weights are stored row-major together with per-row, per-block sums
(``BLOCK`` columns per block) so that sampling an entry is a row search, a
block scan and a short in-block scan, with no N^2 prefix sum.

The active backend is chosen from ``DSMC_NUMBA`` at import (see ``_accel``)
and can be switched with :func:`set_backend`. Both backends implement the same
contracts; results agree to floating-point rounding.
"""

import numpy as np

from ._accel import FASTMATH, HAVE_NUMBA, USE_NUMBA, njit

BLOCK = 64

_GOLDEN = 0x9E3779B97F4A7C15
_STREAM_MULT = 0xD1B54A32D192ED03
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def n_blocks(n_cols):
    return (n_cols + BLOCK - 1) // BLOCK


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------


def _np_block_sums(weights, block_sums):
    starts = np.arange(0, weights.shape[1], BLOCK)
    block_sums[...] = np.add.reduceat(weights, starts, axis=1)
    return block_sums.sum(axis=1)


def _np_pair_weights_gaussian(mu, z, row, col, shift, out, block_sums):
    if mu.shape[1] == 1:
        np.subtract.outer(mu[:, 0], z[:, 0], out=out)
        np.square(out, out=out)
    else:
        diff = mu[:, None, :] - z[None, :, :]
        np.einsum("ijk,ijk->ij", diff, diff, out=out)
    out *= -0.5
    out += (row - shift)[:, None]
    out += col[None, :]
    np.exp(out, out=out)
    return _np_block_sums(out, block_sums)


def _np_pair_logmax_gaussian(mu, z, row, col):
    best = -np.inf
    for i in range(mu.shape[0]):
        sq = np.sum((z - mu[i]) ** 2, axis=1)
        vals = row[i] + col - 0.5 * sq
        best = max(best, float(np.max(vals)))
    return best


def _np_exp_weights_inplace(buf, shift, block_sums):
    buf -= shift
    np.exp(buf, out=buf)
    return _np_block_sums(buf, block_sums)


def _np_search_columns(weights, block_sums, rows, residual):
    n = rows.shape[0]
    n_cols = weights.shape[1]
    nb = block_sums.shape[1]
    bc = np.cumsum(block_sums[rows], axis=1)
    blk = np.minimum((bc <= residual[:, None]).sum(axis=1), nb - 1)
    prev = np.where(blk > 0, bc[np.arange(n), np.maximum(blk - 1, 0)], 0.0)
    r2 = residual - prev
    idx = blk[:, None] * BLOCK + np.arange(BLOCK)[None, :]
    valid = idx < n_cols
    seg = np.where(valid, weights[rows[:, None], np.minimum(idx, n_cols - 1)], 0.0)
    cs = np.cumsum(seg, axis=1)
    k = np.minimum((cs <= r2[:, None]).sum(axis=1), valid.sum(axis=1) - 1)
    cols = blk * BLOCK + k
    bad = np.flatnonzero(weights[rows, cols] <= 0.0)
    for m in bad:
        positive = np.flatnonzero(weights[rows[m]] > 0.0)
        cols[m] = positive[np.argmin(np.abs(positive - cols[m]))]
    return cols


def _np_mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


def _np_counter_uniforms(k0, k1, slots, counters):
    with np.errstate(over="ignore"):
        x = _np_mix64(np.uint64(k0) + slots * np.uint64(_GOLDEN))
        x = _np_mix64(x ^ (np.uint64(k1) + counters * np.uint64(_STREAM_MULT)))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------


@njit(inline="always", fastmath=FASTMATH)
def _exp_nonpos(x):
    # exp for x <= ~0, branch-free so the row loops vectorize; exactly 0 below -708.3.
    # Cody-Waite reduction, degree-12 Taylor polynomial on |r| <= ln2/2.
    xc = max(x, -708.3)
    k = np.floor(xc * 1.4426950408889634 + 0.5)
    r = (xc - k * 0.6931471803691238) - k * 1.9082149292705877e-10
    p = 1.0 / 479001600.0
    p = p * r + 1.0 / 39916800.0
    p = p * r + 1.0 / 3628800.0
    p = p * r + 1.0 / 362880.0
    p = p * r + 1.0 / 40320.0
    p = p * r + 1.0 / 5040.0
    p = p * r + 1.0 / 720.0
    p = p * r + 1.0 / 120.0
    p = p * r + 1.0 / 24.0
    p = p * r + 1.0 / 6.0
    p = p * r + 0.5
    p = p * r + 1.0
    p = p * r + 1.0
    v = p * np.int64(np.int64(k + 1023.0) << 52).view(np.float64)
    return v if x >= -708.3 else 0.0


@njit(inline="always")
def _row_block_sums(o, block_sums, i):
    # second pass over a cache-resident row; cheaper than reducing inside the exp loop
    n_cols = o.shape[0]
    total = 0.0
    for b in range(block_sums.shape[1]):
        lo = b * BLOCK
        hi = min(lo + BLOCK, n_cols)
        s = 0.0
        for j in range(lo, hi):
            s += o[j]
        block_sums[i, b] = s
        total += s
    return total


@njit(fastmath=FASTMATH)
def _nb_pair_weights_1d(mu, z, row, col, shift, out, block_sums):
    n_rows = mu.shape[0]
    n_cols = z.shape[0]
    rowsums = np.empty(n_rows)
    for i in range(n_rows):
        ri = row[i] - shift
        mi = mu[i]
        o = out[i]
        for j in range(n_cols):
            d = z[j] - mi
            o[j] = _exp_nonpos(ri + col[j] - 0.5 * d * d)
        rowsums[i] = _row_block_sums(o, block_sums, i)
    return rowsums


@njit(fastmath=FASTMATH)
def _nb_pair_weights_nd(mu, z, row, col, shift, out, block_sums):
    n_rows, dim = mu.shape
    n_cols = z.shape[0]
    rowsums = np.empty(n_rows)
    for i in range(n_rows):
        ri = row[i] - shift
        o = out[i]
        for j in range(n_cols):
            q = 0.0
            for k in range(dim):
                d = z[j, k] - mu[i, k]
                q += d * d
            o[j] = _exp_nonpos(ri + col[j] - 0.5 * q)
        rowsums[i] = _row_block_sums(o, block_sums, i)
    return rowsums


def _nb_pair_weights_gaussian(mu, z, row, col, shift, out, block_sums):
    if mu.shape[1] == 1:
        return _nb_pair_weights_1d(
            np.ascontiguousarray(mu[:, 0]), np.ascontiguousarray(z[:, 0]),
            row, col, float(shift), out, block_sums,
        )
    return _nb_pair_weights_nd(mu, z, row, col, float(shift), out, block_sums)


@njit
def _nb_pair_logmax_gaussian(mu, z, row, col):
    best = -np.inf
    n_rows, dim = mu.shape
    for i in range(n_rows):
        for j in range(z.shape[0]):
            q = 0.0
            for k in range(dim):
                d = z[j, k] - mu[i, k]
                q += d * d
            v = row[i] + col[j] - 0.5 * q
            if v > best:
                best = v
    return best


@njit(fastmath=FASTMATH)
def _nb_exp_weights_inplace(buf, shift, block_sums):
    n_rows, n_cols = buf.shape
    rowsums = np.empty(n_rows)
    for i in range(n_rows):
        o = buf[i]
        for j in range(n_cols):
            o[j] = _exp_nonpos(o[j] - shift)
        rowsums[i] = _row_block_sums(o, block_sums, i)
    return rowsums


@njit
def _nb_search_columns(weights, block_sums, rows, residual):
    n = rows.shape[0]
    n_cols = weights.shape[1]
    nb = block_sums.shape[1]
    cols = np.empty(n, dtype=np.int64)
    for m in range(n):
        i = rows[m]
        r = residual[m]
        b = 0
        acc = 0.0
        while b < nb - 1 and acc + block_sums[i, b] <= r:
            acc += block_sums[i, b]
            b += 1
        r -= acc
        j = b * BLOCK
        end = min(j + BLOCK, n_cols)
        acc = 0.0
        while j < end - 1 and acc + weights[i, j] <= r:
            acc += weights[i, j]
            j += 1
        if weights[i, j] <= 0.0:
            # rounding pushed the residual past the last positive entry
            best = -1
            for jj in range(n_cols):
                if weights[i, jj] > 0.0 and (best < 0 or abs(jj - j) < abs(best - j)):
                    best = jj
            j = best
        cols[m] = j
    return cols


@njit
def _nb_mix64(x):
    x = (x ^ (x >> np.uint64(30))) * np.uint64(_MIX1)
    x = (x ^ (x >> np.uint64(27))) * np.uint64(_MIX2)
    return x ^ (x >> np.uint64(31))


@njit
def _nb_counter_uniforms_impl(k0, k1, slots, counters):
    out = np.empty(slots.shape[0])
    for m in range(slots.shape[0]):
        x = _nb_mix64(k0 + slots[m] * np.uint64(_GOLDEN))
        x = _nb_mix64(x ^ (k1 + counters[m] * np.uint64(_STREAM_MULT)))
        out[m] = np.float64(x >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return out


def _nb_counter_uniforms(k0, k1, slots, counters):
    return _nb_counter_uniforms_impl(np.uint64(k0), np.uint64(k1), slots, counters)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

_NAMES = (
    "pair_weights_gaussian",
    "pair_logmax_gaussian",
    "exp_weights_inplace",
    "search_columns",
    "counter_uniforms",
)

_BACKENDS = {"numpy": {name: globals()[f"_np_{name}"] for name in _NAMES}}
if HAVE_NUMBA:
    _BACKENDS["numba"] = {name: globals()[f"_nb_{name}"] for name in _NAMES}

_active = "numba" if USE_NUMBA else "numpy"


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"`` kernels; returns the previous name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown or unavailable backend {name!r}")
    previous, _active = _active, name
    return previous


def get_backend():
    return _active


def backend_impl(name, backend=None):
    """Return one kernel of a given backend (for benchmarks and tests)."""
    return _BACKENDS[backend or _active][name]


def pair_weights_gaussian(mu, z, row, col, shift, out, block_sums):
    """Fill ``out[i, j] = exp(row[i] + col[j] - |z[j] - mu[i]|^2 / 2 - shift)``.

    ``block_sums[i, b]`` receives the sum of ``out[i]`` over block ``b``.
    Returns the row sums. ``shift`` must bound every exponent from above.
    """
    return _BACKENDS[_active]["pair_weights_gaussian"](mu, z, row, col, shift, out, block_sums)


def pair_logmax_gaussian(mu, z, row, col):
    """Exact maximum of ``row[i] + col[j] - |z[j] - mu[i]|^2 / 2``."""
    return float(_BACKENDS[_active]["pair_logmax_gaussian"](mu, z, row, col))


def exp_weights_inplace(buf, shift, block_sums):
    """Exponentiate ``buf - shift`` in place and fill block sums; returns row sums."""
    return _BACKENDS[_active]["exp_weights_inplace"](buf, shift, block_sums)


def search_columns(weights, block_sums, rows, residual):
    """For each ``(rows[m], residual[m])`` find the column whose cumulative
    weight interval in that row contains the residual. Zero-weight columns are
    never returned."""
    return _BACKENDS[_active]["search_columns"](
        weights, block_sums, np.asarray(rows, dtype=np.int64), np.asarray(residual, dtype=np.float64)
    )


def counter_uniforms(k0, k1, slots, counters):
    """Counter-based uniforms in [0, 1): a pure function of (key, slot, counter)."""
    slots, counters = np.broadcast_arrays(
        np.asarray(slots, dtype=np.uint64), np.asarray(counters, dtype=np.uint64)
    )
    shape = slots.shape
    out = _BACKENDS[_active]["counter_uniforms"](
        k0, k1, np.ascontiguousarray(slots).ravel(), np.ascontiguousarray(counters).ravel()
    )
    return out.reshape(shape)
