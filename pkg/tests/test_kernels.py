import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsmc import kernels

BACKENDS = sorted(kernels._BACKENDS)


@pytest.fixture(params=BACKENDS)
def backend(request):
    previous = kernels.set_backend(request.param)
    yield request.param
    kernels.set_backend(previous)


def _gaussian_inputs(seed, n_rows, n_cols, d, neg_inf_frac=0.0):
    g = np.random.default_rng(seed)
    mu = g.normal(size=(n_rows, d))
    z = g.normal(size=(n_cols, d))
    row = g.normal(size=n_rows)
    col = g.normal(size=n_cols)
    col[g.random(n_cols) < neg_inf_frac] = -np.inf
    return mu, z, row, col


def _reference_weights(mu, z, row, col, shift):
    sq = np.sum((z[None, :, :] - mu[:, None, :]) ** 2, axis=-1)
    return np.exp(row[:, None] + col[None, :] - 0.5 * sq - shift)


@given(
    n_rows=st.integers(1, 40),
    n_cols=st.integers(1, 150),
    d=st.integers(1, 3),
    seed=st.integers(0, 2**31),
    neg_inf=st.sampled_from([0.0, 0.3]),
)
def test_pair_weights_match_direct_formula(n_rows, n_cols, d, seed, neg_inf):
    mu, z, row, col = _gaussian_inputs(seed, n_rows, n_cols, d, neg_inf)
    shift = float(np.max(row) + np.max(col)) if np.isfinite(np.max(col)) else 0.0
    expected = _reference_weights(mu, z, row, col, shift)
    for name in BACKENDS:
        out = np.empty((n_rows, n_cols))
        bs = np.empty((n_rows, kernels.n_blocks(n_cols)))
        rowsums = kernels.backend_impl("pair_weights_gaussian", name)(mu, z, row, col, shift, out, bs)
        np.testing.assert_allclose(out, expected, rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(rowsums, expected.sum(axis=1), rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(bs.sum(axis=1), rowsums, rtol=1e-12, atol=1e-300)


def test_exp_of_neg_inf_is_exact_zero(backend):
    buf = np.array([[-np.inf, 0.0, -800.0, -1.0]])
    bs = np.empty((1, 1))
    rs = kernels.exp_weights_inplace(buf, 0.0, bs)
    assert buf[0, 0] == 0.0 and buf[0, 2] == 0.0
    assert buf[0, 1] == 1.0
    assert buf[0, 3] == pytest.approx(np.exp(-1.0), rel=1e-14)
    assert rs[0] == pytest.approx(1 + np.exp(-1.0), rel=1e-14)


def test_exp_accuracy_over_range(backend):
    x = np.linspace(-700, 0, 20001)[None, :]
    buf = x.copy()
    bs = np.empty((1, kernels.n_blocks(x.shape[1])))
    kernels.exp_weights_inplace(buf, 0.0, bs)
    np.testing.assert_allclose(buf, np.exp(x), rtol=1e-13)


@given(n_cols=st.integers(1, 300), seed=st.integers(0, 2**31), zero_frac=st.sampled_from([0.0, 0.5, 0.9]))
def test_search_columns_finds_containing_interval(n_cols, seed, zero_frac):
    g = np.random.default_rng(seed)
    w = g.random((3, n_cols))
    w[g.random(w.shape) < zero_frac] = 0.0
    w[:, g.integers(n_cols)] = 0.5  # every row keeps some mass
    bs = np.add.reduceat(w, np.arange(0, n_cols, kernels.BLOCK), axis=1)
    rows = g.integers(0, 3, size=50)
    resid = g.random(50) * w[rows].sum(axis=1) * (1 - 1e-15)
    for name in BACKENDS:
        cols = kernels.backend_impl("search_columns", name)(w, bs, rows.astype(np.int64), resid)
        cs = np.cumsum(w[rows], axis=1)
        lo = np.take_along_axis(cs, cols[:, None], 1)[:, 0] - w[rows, cols]
        hi = np.take_along_axis(cs, cols[:, None], 1)[:, 0]
        assert np.all(w[rows, cols] > 0)
        assert np.all(lo <= resid * (1 + 1e-12) + 1e-12)
        assert np.all(resid <= hi * (1 + 1e-12) + 1e-12)


def test_logmax_is_exact_maximum(backend):
    mu, z, row, col = _gaussian_inputs(3, 17, 23, 2, 0.2)
    sq = np.sum((z[None] - mu[:, None]) ** 2, axis=-1)
    assert kernels.pair_logmax_gaussian(mu, z, row, col) == pytest.approx(np.max(row[:, None] + col - 0.5 * sq))


@given(k0=st.integers(0, 2**64 - 1), k1=st.integers(0, 2**64 - 1))
def test_counter_uniforms_backends_agree_bitwise(k0, k1):
    slots = np.arange(200, dtype=np.uint64)
    counters = np.arange(200, dtype=np.uint64) * np.uint64(7)
    outs = [kernels.backend_impl("counter_uniforms", b)(k0, k1, slots, counters) for b in BACKENDS]
    for o in outs:
        assert np.all((o >= 0) & (o < 1))
        np.testing.assert_array_equal(o, outs[0])


def test_counter_uniforms_are_uniform():
    from scipy import stats

    u = kernels.counter_uniforms(1, 2, np.arange(100_000), 0)
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    v = kernels.counter_uniforms(1, 2, 5, np.arange(100_000))
    assert stats.kstest(v, "uniform").pvalue > 1e-3


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernels.set_backend("cuda")
