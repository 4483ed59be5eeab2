import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import optimize
from scipy.special import logsumexp

from dppmix import dpp
from dppmix.model import ConfigError, CovHyperparams, CovMixtureState, Hyperparams, validate_state
from dppmix.sampler import McmcSchedule, normal_logpdf_matrix
from dppmix.sampler_cov import (
    _combine_state,
    _ordered_members,
    _split_state,
    aux_proposal,
    draw_bipartition,
    gating_mode,
    gating_proposal,
    log_bipartition_prob,
    log_complete_lik,
    log_gating,
    log_split_ratio_cov,
    nig_posterior,
    prepare_data,
    run_chain_cov,
    update_gamma_sigma,
    update_labels_cov,
)


@pytest.fixture(scope="module")
def small_problem():
    rng = np.random.default_rng(5)
    n, p = 40, 2
    X = rng.standard_normal((n, p))
    y = np.where(X[:, 0] > 0, 3.0, -3.0) + 0.5 * rng.standard_normal(n)
    hyper = CovHyperparams(base=Hyperparams(a0=3.0, b0=3.0)).resolve(p)
    data = prepare_data(y, X, hyper)
    window = dpp.build_window(hyper.base.spectral(3.0, 2.0), (-6.0, 6.0))
    return data, hyper, window


def make_state(k, n, p, rng, lo=-5.0, hi=5.0):
    mu = np.sort(rng.uniform(lo, hi, k))
    beta = rng.standard_normal((k, p))
    beta[0] = 0.0
    return CovMixtureState(
        mu, rng.uniform(0.5, 2.0, k), 0.3 * rng.standard_normal((k, p)), beta,
        rng.integers(0, k, n), 3.0, 2.0,
    )


def test_prepare_data_rejects_bad_designs():
    hyper = CovHyperparams().resolve(2)
    y = np.zeros(5)
    with pytest.raises(ConfigError):
        prepare_data(y, np.ones((5, 2)), hyper)
    with pytest.raises(ConfigError):
        prepare_data(y, np.ones((4, 2)), hyper)
    X = np.random.default_rng(0).standard_normal((5, 2))
    X[0, 0] = np.nan
    with pytest.raises(ConfigError):
        prepare_data(y, X, hyper)


def test_g_prior_covariance(small_problem):
    data, hyper, _ = small_problem
    want = hyper.g * np.linalg.inv(data.X.T @ data.X)
    np.testing.assert_allclose(data.sigma0, want, rtol=1e-12)
    np.testing.assert_allclose(data.sigma0 @ data.sigma0_inv, np.eye(2), atol=1e-10)


@given(st.integers(1, 6), st.integers(0, 10_000))
def test_gating_weights_sum_to_one(k, seed):
    rng = np.random.default_rng(seed)
    beta = 5.0 * rng.standard_normal((k, 3))
    beta[0] = 0.0
    X = 4.0 * rng.standard_normal((20, 3))
    w = np.exp(log_gating(beta, X))
    assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-12)


def test_zero_slopes_and_gating_reduce_to_equal_weight_mixture(rng):
    # beta = gamma = 0 must give the no-covariate kernels with w_k = 1/K
    n, k = 30, 4
    y = rng.standard_normal(n)
    X = rng.standard_normal((n, 2))
    hyper = CovHyperparams().resolve(2)
    data = prepare_data(y, X, hyper)
    state = make_state(k, n, 2, rng)
    state.beta[:] = 0.0
    state.gamma[:] = 0.0
    logn = normal_logpdf_matrix(y, state.mu, state.sigma2)
    want = float(np.sum(logn[np.arange(n), state.labels])) - n * math.log(k)
    assert log_complete_lik(state, data) == pytest.approx(want, rel=1e-12)
    draws = np.array([update_labels_cov(state, data, np.random.default_rng(s)).labels[0] for s in range(4000)])
    probs = np.exp(logn[0] - logsumexp(logn[0]))
    emp = np.bincount(draws, minlength=k) / draws.size
    assert np.all(np.abs(emp - probs) <= 4 * np.sqrt(probs * (1 - probs) / draws.size) + 1e-3)


def test_nig_posterior_closed_form(rng):
    Z = rng.standard_normal((15, 3))
    r = rng.standard_normal(15)
    prec0 = np.diag([0.5, 2.0, 1.0])
    V, m, a, b = nig_posterior(Z, r, prec0, 2.0, 1.5)
    prec = prec0 + Z.T @ Z
    m_want = np.linalg.solve(prec, Z.T @ r)
    np.testing.assert_allclose(V @ prec, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(m, m_want, rtol=1e-12)
    assert a == 2.0 + 7.5
    b_want = 1.5 + 0.5 * (r @ r - m_want @ prec @ m_want)
    assert b == pytest.approx(b_want, rel=1e-12)


def test_gamma_sigma_update_matches_conjugate_moments(rng):
    n, p = 25, 2
    X = rng.standard_normal((n, p))
    y = 1.0 + X @ np.array([0.7, -0.4]) + 0.6 * rng.standard_normal(n)
    hyper = CovHyperparams(base=Hyperparams(a0=3.0, b0=2.0)).resolve(p)
    data = prepare_data(y, X, hyper)
    state = CovMixtureState(np.array([1.0]), np.ones(1), np.zeros((1, p)), np.zeros((1, p)),
                            np.zeros(n, np.int64), 2.0, 2.0)
    V, m, a, b = nig_posterior(X, y - 1.0, data.lambda0_inv, 3.0, 2.0)
    draws = 20_000
    s2 = np.empty(draws)
    g = np.empty((draws, p))
    for i in range(draws):
        update_gamma_sigma(state, data, hyper, rng)
        s2[i], g[i] = state.sigma2[0], state.gamma[0]
    s2_mean = b / (a - 1)
    s2_sd = s2_mean / math.sqrt(a - 2)
    assert abs(s2.mean() - s2_mean) <= 4 * s2_sd / math.sqrt(draws)
    g_sd = np.sqrt(np.diag(V) * s2_mean)
    assert np.all(np.abs(g.mean(axis=0) - m) <= 4 * g_sd / math.sqrt(draws))


def test_gating_mode_matches_numerical_optimum(small_problem):
    data, hyper, _ = small_problem
    rng = np.random.default_rng(3)
    target = rng.random(data.n) < 0.4
    log_c = np.log1p(np.exp(data.X @ np.array([0.5, -0.2])))
    mode, cov = gating_mode(data.X, target, log_c, hyper, data)

    def neg(b):
        a = data.X @ b
        d = b - hyper.beta0
        return -(float(target @ a - np.sum(np.logaddexp(a, log_c))) - 0.5 * float(d @ data.sigma0_inv @ d))

    ref = optimize.minimize(neg, np.zeros(2), method="BFGS", options={"gtol": 1e-10})
    np.testing.assert_allclose(mode, ref.x, atol=1e-5)
    np.testing.assert_allclose(cov, cov.T)
    assert np.all(np.linalg.eigvalsh(cov) > 0)


@given(st.integers(0, 7), st.integers(0, 1000))
def test_bipartition_probabilities_sum_to_one(n, seed):
    ordered = np.random.default_rng(seed).permutation(20)[:n]
    total = sum(
        math.exp(log_bipartition_prob(ordered, np.array(sub, dtype=np.int64)))
        for r in range(n + 1)
        for sub in itertools.combinations(ordered.tolist(), r)
    )
    assert total == pytest.approx(1.0, abs=1e-12)


def test_bipartition_draws_match_probabilities():
    rng = np.random.default_rng(11)
    ordered = np.array([4, 1, 3])
    draws = 40_000
    counts = {}
    for _ in range(draws):
        key = tuple(sorted(draw_bipartition(ordered, rng).tolist()))
        counts[key] = counts.get(key, 0) + 1
    for key, c in counts.items():
        p = math.exp(log_bipartition_prob(ordered, np.array(key, dtype=np.int64)))
        assert abs(c / draws - p) <= 4 * math.sqrt(p * (1 - p) / draws)
    assert len(counts) == 8


def test_split_and_combine_states_are_inverse(small_problem):
    data, hyper, window = small_problem
    rng = np.random.default_rng(2)
    small = make_state(3, data.n, data.p, rng)
    parent, pos = 1, 3
    ordered = _ordered_members(small, parent, data)
    moved = ordered[: ordered.size // 2]
    theta_p = (small.mu[parent], small.gamma[parent].copy(), small.sigma2[parent])
    big = _split_state(small, parent, pos, moved, theta_p, (4.0, np.zeros(2), 1.0), np.ones(2))
    assert big.k == 4 and np.all(big.labels[moved] == pos)
    validate_state(big, n=data.n)
    back, keep = _combine_state(big, pos, parent, theta_p)
    assert keep == parent
    np.testing.assert_array_equal(back.labels, small.labels)
    np.testing.assert_allclose(back.mu, small.mu)
    np.testing.assert_allclose(back.beta, small.beta)


def test_split_ratio_is_finite_and_zero_outside_window(small_problem):
    data, hyper, window = small_problem
    rng = np.random.default_rng(4)
    small = make_state(2, data.n, data.p, rng)
    ordered = _ordered_members(small, 0, data)
    moved = ordered[:3]
    kept = np.setdiff1d(ordered, moved)
    theta_p = aux_proposal(data, kept, hyper).sample(rng)
    beta = gating_proposal(small, moved, data, hyper).sample(rng)
    big = _split_state(small, 0, 1, moved, theta_p, (2.0, np.zeros(2), 1.0), beta)
    assert math.isfinite(log_split_ratio_cov(small, big, 0, 1, data, window, hyper))
    big.mu[1] = 50.0
    assert log_split_ratio_cov(small, big, 0, 1, data, window, hyper) == -math.inf


def importance_k_posterior_cov(y, X, hyper, data, window, rect, k_max, draws, rng):
    """Posterior of K for one covariate by importance sampling from uniform locations and the other priors."""
    vol = rect[1] - rect[0]
    x1 = X[:, 0]
    logp = []
    for k in range(1, k_max + 1):
        mu = rng.uniform(*rect, size=(draws, k))
        lf = np.array([dpp.log_density_rect(window, m) for m in mu])
        s2 = 1.0 / rng.gamma(hyper.base.a0, 1.0 / hyper.base.b0, size=(draws, k))
        gam = rng.standard_normal((draws, k)) * np.sqrt(s2 * hyper.lambda0[0, 0])
        beta = rng.standard_normal((draws, k)) * math.sqrt(data.sigma0[0, 0])
        beta[:, 0] = 0.0
        scores = x1[None, :, None] * beta[:, None, :]
        lw = scores - logsumexp(scores, axis=2, keepdims=True)
        mean = mu[:, None, :] + x1[None, :, None] * gam[:, None, :]
        comp = lw - 0.5 * (np.log(2 * np.pi * s2)[:, None, :] + (y[None, :, None] - mean) ** 2 / s2[:, None, :])
        ll = logsumexp(comp, axis=2).sum(axis=1)
        logp.append(k * math.log(vol) - math.lgamma(k + 1) + logsumexp(lf + ll) - math.log(draws))
    logp = np.array(logp)
    return np.exp(logp - logsumexp(logp))


def test_posterior_of_k_matches_importance_sampling_oracle():
    y = np.array([-2.0, -1.6, 2.5])
    X = np.array([[0.5], [-1.0], [1.2]])
    rect = (-5.0, 5.0)
    hyper = CovHyperparams(base=Hyperparams(a0=3.0, b0=1.0, rho_fixed=2.0), g=2.0).resolve(1)
    data = prepare_data(y, X, hyper)
    window = dpp.build_window(hyper.base.spectral(2.0, 2.0), rect)
    oracle = importance_k_posterior_cov(y, X, hyper, data, window, rect, 7, 30_000, np.random.default_rng(0))
    tr = run_chain_cov(y, X, hyper, McmcSchedule(1000, 2, 10_000, seed=1), rect)
    ks = np.array([s.k for s in tr.states])
    emp = np.bincount(ks, minlength=8)[1:8] / ks.size
    assert 0.5 * np.abs(emp - oracle).sum() <= 0.04


def test_prior_only_chain_recovers_count_law():
    # without the normal likelihood the chain must leave the prior of K invariant
    rng = np.random.default_rng(1)
    n = 5
    X = rng.standard_normal((n, 1))
    y = rng.standard_normal(n)
    base = Hyperparams(a0=3.0, b0=3.0, rho_fixed=2.0)
    hyper = CovHyperparams(base=base, g=0.1 * n, aux_gamma0=np.diag([8.0, 1.0]))
    tr = run_chain_cov(y, X, hyper, McmcSchedule(2000, 5, 6000, seed=3), (-5.0, 5.0), flat=True)
    ks = np.array([s.k for s in tr.states])
    window = dpp.build_window(base.spectral(2.0, 2.0), (-5.0, 5.0))
    pmf = dpp.count_pmf(window)
    pmf[0] = 0.0
    pmf /= pmf.sum()
    emp = np.bincount(ks, minlength=pmf.size)[: pmf.size] / ks.size
    assert 0.5 * np.abs(emp - pmf).sum() <= 0.08


def test_chain_invariants_and_reproducibility(small_problem):
    data, hyper, _ = small_problem
    sched = McmcSchedule(50, 2, 40, seed=9)
    a = run_chain_cov(data.y, data.X, hyper, sched)
    b = run_chain_cov(data.y, data.X, hyper, sched)
    assert len(a) == 40
    for s, t in zip(a.states, b.states):
        assert np.all(s.beta[0] == 0.0)
        np.testing.assert_array_equal(s.mu, t.mu)
        np.testing.assert_array_equal(s.labels, t.labels)
        w = np.exp(log_gating(s.beta, data.X))
        assert np.all(np.abs(w.sum(axis=1) - 1.0) <= 1e-12)
        validate_state(s, n=data.n)


def test_chain_rejects_bad_arguments(small_problem):
    data, hyper, _ = small_problem
    with pytest.raises(ConfigError):
        run_chain_cov(data.y, data.X, Hyperparams(), McmcSchedule(1, 1, 1))
    with pytest.raises(ConfigError):
        run_chain_cov(data.y, data.X, hyper, "schedule")
