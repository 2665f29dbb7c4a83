"""Timing of the numba and numpy kernel backends."""

import time

import numpy as np

from . import kernels
from .models import lgssm_fk, simulate_scalar_lgssm
from .smoother import run_dsmc


def _best_of(fn, repeats):
    best = np.inf
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def bench_combine_kernel(sizes=(256, 1024, 4096), repeats=3, seed=0):
    """Seconds for one dense Gaussian pair-weight fill plus N column searches."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        mu, z = rng.normal(size=(n, 1)), rng.normal(size=(n, 1))
        row, col = rng.normal(size=n) * 0.1, rng.normal(size=n) * 0.1
        out = np.empty((n, n))
        block_sums = np.empty((n, kernels.n_blocks(n)))
        shift = float(row.max() + col.max())
        targets = np.arange(n)
        for backend in ("numpy", "numba"):
            if backend not in kernels._BACKENDS:
                continue
            fill = kernels.backend_impl("pair_weights_gaussian", backend)
            search = kernels.backend_impl("search_columns", backend)

            def work():
                rs = fill(mu, z, row, col, shift, out, block_sums)
                search(out, block_sums, targets, rs * 0.5)

            work()
            rows.append({"kernel": "gaussian_combine", "N": n, "backend": backend,
                         "seconds": _best_of(work, repeats)})
    return rows


def bench_smoother(T=31, N=1024, repeats=2, seed=0):
    """Seconds for a full smoother run on a 1-D LGSSM with each backend."""
    lg, _ = simulate_scalar_lgssm(T, seed)
    model = lgssm_fk(lg, "smoother")
    rows = []
    previous = kernels.get_backend()
    try:
        for backend in ("numpy", "numba"):
            if backend not in kernels._BACKENDS:
                continue
            kernels.set_backend(backend)
            run_dsmc(model, N, "multinomial", seed)
            secs = _best_of(lambda: run_dsmc(model, N, "multinomial", seed), repeats)
            rows.append({"kernel": "run_dsmc", "N": N, "T": T, "backend": backend, "seconds": secs})
    finally:
        kernels.set_backend(previous)
    return rows
