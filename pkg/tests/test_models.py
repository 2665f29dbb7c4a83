import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dsmc import InvalidInputError, estimate, kalman_smoother, log_stitch_weight, run_dsmc
from dsmc.models import (
    CoxParams,
    ThetaLogisticParams,
    ThetaLogisticPrior,
    constrained_rw_model,
    cox_model,
    cox_score,
    lgssm_fk,
    load_nutria,
    rw_fisher_score,
    scalar_lgssm,
    simulate_cox,
    theta_logistic_model,
)
from dsmc.stats import acf, loglog_slope
from oracles import constrained_rw_grid, cox_grid


# ------------------------------------------------------------------- cox


def test_cox_params_validated():
    with pytest.raises(InvalidInputError):
        CoxParams(rho=1.0)
    with pytest.raises(InvalidInputError):
        CoxParams(sigma2=0.0)


def test_cox_zero_counts_have_finite_potentials():
    model = cox_model(CoxParams(), np.zeros(4))
    x = np.linspace(-20, 5, 50)[:, None]
    lp = model.log_potential(2, x)
    assert np.all(np.isfinite(lp))
    np.testing.assert_allclose(lp, -np.exp(x[:, 0]))


def test_cox_smoother_matches_grid_oracle():
    params = CoxParams()
    _, ys = simulate_cox(params, 5, seed=21)
    grid = cox_grid(params, ys, n_points=400)
    model = cox_model(params, ys)
    reps = np.array([run_dsmc(model, 1024, seed=s)[0].trajectories[:, :, 0].mean(axis=1) for s in range(20)])
    se = reps.std(axis=0, ddof=1) / math.sqrt(len(reps))
    assert np.all(np.abs(reps.mean(axis=0) - grid.means()) < 3.5 * se)


def test_cox_score_examples():
    phi = cox_score(sigma2=0.7, mu=1.3, rho=0.0)
    assert phi(np.full((5, 1), 1.3)) == pytest.approx(-5 / (2 * 0.7))
    phi = cox_score(sigma2=1.0, mu=0.0, rho=0.5)
    assert phi(np.array([[1.0], [2.0]])) == pytest.approx(0.5)


@given(seed=st.integers(0, 2**31))
def test_cox_score_estimate_is_linear(seed):
    g = np.random.default_rng(seed)
    from dsmc import BlockEstimate

    block = BlockEstimate(0, 4, g.normal(size=(5, 16, 1)))
    a, b = cox_score(0.3, 0.1, 0.8), cox_score(1.1, -0.4, 0.2)

    def both(x):
        return a(x) + b(x)

    both.vectorized = True
    assert estimate(block, both) == pytest.approx(estimate(block, a) + estimate(block, b), rel=1e-12)


def test_cox_lambda_scales_the_mean():
    model = cox_model(CoxParams(mu=0.5, rho=0.8, lam=2.0), np.zeros(3))
    assert model.transition_mean(1, np.array([[1.0]]))[0, 0] == pytest.approx(0.5 + 0.8 * (2.0 - 0.5))


# -------------------------------------------------------- constrained RW


def test_rw_large_sigma_flattens_weights():
    model = constrained_rw_model(1e4, 2)
    xs = np.linspace(-1, 1, 11)
    w = log_stitch_weight(model, 1, xs[:, None, None], xs[None, :, None])
    assert np.ptp(w) < 1e-7
    assert np.max(w) == pytest.approx(model.log_stitch_bound(1), abs=1e-7)


def test_rw_smoother_matches_grid_oracle():
    grid = constrained_rw_grid(0.5, 2)
    model = constrained_rw_model(0.5, 2)
    vals = np.array([run_dsmc(model, 2048, seed=s)[0].trajectories[1, :, 0].mean() for s in range(20)])
    se = vals.std(ddof=1) / math.sqrt(vals.size)
    assert abs(vals.mean() - grid.means()[1]) < 3 * se


def test_rw_proposals_stay_in_box(rng):
    model = constrained_rw_model(0.5, 3)
    x = model.sample_proposal(1, 100_000, rng)
    assert np.all(np.isfinite(model.log_potential(1, x)))


def test_rw_fisher_score_examples():
    phi = rw_fisher_score(0.8)
    assert phi(np.full((6, 1), 0.3)) == pytest.approx(math.log(0.8))
    assert rw_fisher_score(1.0)(np.array([[0.0], [0.5]])) == pytest.approx(0.25)


@given(seed=st.integers(0, 2**31), k=st.integers(1, 8))
def test_rw_fisher_score_additive(seed, k):
    g = np.random.default_rng(seed)
    x = g.uniform(-1, 1, size=(10, 1))
    phi = rw_fisher_score(0.5)
    quad = phi(x) - math.log(0.5)
    parts = (phi(x[: k + 1]) - math.log(0.5)) + (phi(x[k:]) - math.log(0.5))
    assert quad == pytest.approx(parts, rel=1e-12)


def test_rw_requires_positive_sigma():
    with pytest.raises(InvalidInputError):
        constrained_rw_model(0.0, 3)


# -------------------------------------------------------- theta-logistic


def test_nutria_data_loads():
    ys = load_nutria()
    assert ys.shape == (120,)
    assert np.all(np.isfinite(ys))


def test_theta_logistic_linear_case_matches_kalman():
    # tau1 = 0 gives a random walk with drift tau0
    p = ThetaLogisticParams(tau0=0.1, tau1=0.0, tau2=0.5, sigma_x=0.5, sigma_y=0.4)
    ys = np.cumsum(np.full(8, 0.1)) + np.random.default_rng(0).normal(0, 0.4, 8)
    lg = scalar_lgssm(ys, F=1.0, Q=0.25, H=1.0, R=0.16, m0=0.0, P0=1.0)
    lg.b[:] = 0.1
    exact, loglik = kalman_smoother(lg)
    model = theta_logistic_model(p, ys, n_iterations=2)
    np.testing.assert_allclose(model.proposal.means, exact.means, atol=1e-9)
    reps = [run_dsmc(model, 512, seed=s)[1].log_norm_const - loglik for s in range(200)]
    ratios = np.exp(reps)
    assert abs(ratios.mean() - 1) < 3 * ratios.std(ddof=1) / math.sqrt(len(ratios))


def test_theta_logistic_tau2_zero_is_constant_shift():
    p = ThetaLogisticParams(tau0=0.4, tau1=0.15, tau2=0.0)
    model = theta_logistic_model(p, np.zeros(3), n_iterations=1)
    x = np.array([[-2.0], [0.0], [3.0]])
    np.testing.assert_allclose(model.transition_mean(1, x), x + 0.25)


def test_prior_draws_in_support(rng):
    prior = ThetaLogisticPrior()
    for _ in range(50):
        theta = prior.sample(rng)
        taus = np.array([theta.tau0, theta.tau1, theta.tau2])
        assert np.all((taus >= 0) & (taus <= 3))
        assert np.isfinite(prior.tau_logpdf(taus))
    assert prior.tau_logpdf([4.0, 0.1, 0.1]) == -np.inf


def test_missing_data_falls_back(monkeypatch):
    from dsmc import models

    class Missing:
        @staticmethod
        def files(pkg):
            raise FileNotFoundError

    monkeypatch.setattr(models, "resources", Missing)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        ys = models.load_nutria()
    assert ys.shape == (120,)
    assert any("synthetic" in str(w.message) for w in caught)


# ----------------------------------------------------------------- stats


def test_acf_white_noise(rng):
    x = rng.standard_normal(5000)
    r = acf(x, 20)
    assert r[0] == 1.0
    assert np.all(np.abs(r[1:]) < 3 / math.sqrt(5000))


def test_acf_ar1(rng):
    n, rho = 50_000, 0.9
    e = rng.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / math.sqrt(1 - rho**2)
    for t in range(1, n):
        x[t] = rho * x[t - 1] + e[t]
    r = acf(x, 10)
    np.testing.assert_allclose(r, rho ** np.arange(11), atol=0.03)


def test_acf_constant_series_errors():
    with pytest.raises(ValueError):
        acf(np.ones(10), 3)


def test_loglog_slope():
    assert loglog_slope([1, 10, 100], [3, 0.3, 0.03]) == pytest.approx(-1.0)


def test_lgssm_proposal_choices():
    lg = scalar_lgssm(np.zeros(4))
    with pytest.raises(InvalidInputError):
        lgssm_fk(lg, "banana")
