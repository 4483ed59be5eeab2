import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from dppmix import dpp
from dppmix.model import (
    ConfigError,
    CovHyperparams,
    CovMixtureState,
    Hyperparams,
    MixtureState,
    NuPrior,
    log_dirichlet,
    log_invgamma,
    log_prior_rho,
    sample_prior_state,
    state_from_dict,
    state_to_dict,
    validate_state,
)
from dppmix.spectral import Family


def test_defaults_are_valid():
    h = Hyperparams()
    assert h.nu.is_fixed and h.nu.support == (2.0,)
    assert h.rho_offset(2.0) == pytest.approx(1.1680655, rel=1e-6)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"epsilon": 0.5},
        {"epsilon": 0.6},
        {"s": 1.0},
        {"a0": 0.0},
        {"delta": -1.0},
        {"b_rho": 0.0},
        {"rho_fixed": -2.0},
        {"family": Family.WHITTLE_MATERN},
    ],
)
def test_invalid_hyperparameters(kwargs):
    with pytest.raises(ConfigError):
        Hyperparams(**kwargs)


def test_non_pes_family_needs_valid_fixed_rho():
    Hyperparams(family=Family.WHITTLE_MATERN, rho_fixed=1.0, alpha=0.1)
    with pytest.raises(ConfigError):
        Hyperparams(family=Family.WHITTLE_MATERN, rho_fixed=3.0, alpha=0.1)


def test_nu_prior():
    prior = NuPrior((10, 1, 2, 2))
    assert prior.support == (1.0, 2.0, 10.0)
    assert prior.log_prob(2.0) == pytest.approx(-math.log(3))
    assert prior.log_prob(3.0) == -math.inf
    with pytest.raises(ConfigError):
        NuPrior(())
    with pytest.raises(ConfigError):
        NuPrior((0.0,))


def test_rho_prior_is_shifted_gamma():
    h = Hyperparams(a_rho=2.0, b_rho=3.0)
    off = h.rho_offset(2.0)
    assert log_prior_rho(off + 0.7, h, 2.0) == pytest.approx(stats.gamma.logpdf(0.7, 2.0, scale=1 / 3))
    assert log_prior_rho(off - 1e-9, h, 2.0) == -math.inf


def test_invgamma_and_dirichlet_match_scipy():
    assert log_invgamma(1.3, 3.0, 2.0) == pytest.approx(stats.invgamma.logpdf(1.3, 3.0, scale=2.0))
    w = np.array([0.2, 0.3, 0.5])
    assert log_dirichlet(w, 1.5) == pytest.approx(stats.dirichlet.logpdf(w, [1.5] * 3))


def _state(k=3, n=5):
    return MixtureState(
        np.linspace(-1, 1, k), np.ones(k), np.full(k, 1.0 / k), np.arange(n) % k, 3.0, 2.0
    )


def test_validate_accepts_good_state():
    window = dpp.build_window(Hyperparams().spectral(3.0, 2.0), (-5, 5))
    assert validate_state(_state(), Hyperparams(), window, n=5) == []


def test_validate_reports_problems():
    s = _state()
    s.w = np.array([0.5, 0.5, 0.5])
    s.labels[0] = 7
    s.sigma2[1] = -1.0
    s.rho = 0.5
    window = dpp.build_window(Hyperparams().spectral(3.0, 2.0), (-0.5, 0.5))
    problems = validate_state(s, Hyperparams(), window)
    for code in ("w_not_simplex", "label_out_of_range", "sigma2_nonpositive", "rho_below_offset",
                 "mu_outside_window"):
        assert code in problems


def test_validate_covariate_reference():
    s = CovMixtureState(np.zeros(2), np.ones(2), np.zeros((2, 2)), np.ones((2, 2)), np.zeros(4, int), 3.0)
    assert "beta_reference_nonzero" in validate_state(s)


def test_cov_hyper_resolve_defaults():
    h = CovHyperparams().resolve(3)
    assert h.beta0.shape == (3,)
    assert np.array_equal(h.lambda0, np.eye(3))
    assert np.array_equal(h.aux_gamma0, 10 * np.eye(4))
    assert h.aux_xi0 == h.base.a0 and h.aux_nu0 == h.base.b0
    with pytest.raises(ConfigError):
        CovHyperparams(lambda0=np.array([[1.0, 2.0], [2.0, 1.0]])).resolve(2)
    with pytest.raises(ConfigError):
        CovHyperparams(g=0.0)
    with pytest.raises(ConfigError):
        CovHyperparams(base=Hyperparams(nu=NuPrior((1.0, 2.0))))


def test_prior_state_draws_are_valid(rng):
    h = Hyperparams(rho_fixed=2.0)
    window = dpp.build_window(h.spectral(2.0, 2.0), (-5, 5))
    ks = []
    for _ in range(300):
        s = sample_prior_state(h, window, rng, n=4)
        assert validate_state(s, h, window, n=4) == []
        ks.append(s.k)
    mom = dpp.prior_count_moments(window)
    assert abs(np.mean(ks) - mom.cond_mean) < 4 * math.sqrt(mom.cond_var / len(ks))


@given(st.integers(1, 6), st.integers(0, 8), st.booleans())
def test_state_dict_round_trip(k, n, cov):
    rng = np.random.default_rng(k * 31 + n)
    if cov:
        s = CovMixtureState(rng.normal(size=k), rng.gamma(2.0, size=k), rng.normal(size=(k, 2)),
                            np.vstack([np.zeros(2), rng.normal(size=(k - 1, 2))]),
                            rng.integers(0, k, n), 2.5, 2.0)
    else:
        w = rng.dirichlet(np.ones(k))
        s = MixtureState(rng.normal(size=k), rng.gamma(2.0, size=k), w, rng.integers(0, k, n), 2.5, 2.0)
    back = state_from_dict(state_to_dict(s))
    for name in ("mu", "sigma2", "labels"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    assert type(back) is type(s)
