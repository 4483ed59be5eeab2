"""Hyperparameters, parameter states and prior densities for both mixtures."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .spectral import Family, ParameterError, SpectralModel, m_threshold


class ConfigError(ValueError):
    """Invalid hyperparameter or configuration value."""


@dataclass(frozen=True)
class NuPrior:
    """Either a fixed shape ``nu`` or a uniform prior on a finite support."""

    support: tuple

    def __post_init__(self):
        support = tuple(float(v) for v in self.support)
        if not support or any(not (v > 0 and math.isfinite(v)) for v in support):
            raise ConfigError("nu support must be a nonempty set of positive values")
        object.__setattr__(self, "support", tuple(sorted(set(support))))

    @classmethod
    def fixed(cls, value):
        return cls((value,))

    @property
    def is_fixed(self):
        return len(self.support) == 1

    def log_prob(self, nu):
        return -math.log(len(self.support)) if nu in self.support else -math.inf


@dataclass(frozen=True)
class Hyperparams:
    """Hyperparameters of the repulsive mixture without covariates.

    ``rho_fixed`` pins the intensity (no prior, no update); otherwise
    ``rho = M(s, epsilon, nu) + rho0`` with ``rho0 ~ gamma(a_rho, rate=b_rho)``.
    """

    delta: float = 1.0
    a0: float = 3.0
    b0: float = 3.0
    a_rho: float = 1.0
    b_rho: float = 1.0
    epsilon: float = 0.05
    s: float = 0.5
    nu: NuPrior = field(default_factory=lambda: NuPrior.fixed(2.0))
    rho_fixed: float | None = None
    family: Family = Family.POWER_EXPONENTIAL
    alpha: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "family", Family(self.family))
        if not isinstance(self.nu, NuPrior):
            object.__setattr__(self, "nu", NuPrior(tuple(np.atleast_1d(self.nu))))
        for name in ("delta", "a0", "b0", "a_rho", "b_rho", "alpha"):
            value = getattr(self, name)
            if not (value > 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be positive, got {value}")
        if not 0.0 < self.s < 1.0:
            raise ConfigError(f"s must lie in (0, 1), got {self.s}")
        if not 0.0 < self.epsilon < self.s:
            raise ConfigError(f"epsilon must lie in (0, s), got epsilon={self.epsilon}, s={self.s}")
        if self.rho_fixed is not None and not self.rho_fixed > 0:
            raise ConfigError("rho_fixed must be positive")
        if self.family is not Family.POWER_EXPONENTIAL:
            if self.rho_fixed is None:
                raise ConfigError("non-PES spectral families require a fixed rho")
            try:
                self.spectral(self.rho_fixed, self.nu.support[0])
            except ParameterError as exc:
                raise ConfigError(str(exc)) from exc

    def rho_offset(self, nu):
        return m_threshold(self.s, self.epsilon, nu)

    def spectral(self, rho, nu):
        return SpectralModel(self.family, rho=rho, nu=nu, s=self.s, alpha=self.alpha)

    def replace(self, **kwargs):
        return replace(self, **kwargs)


def log_prior_rho(rho, hyper, nu=2.0):
    """Log density of ``rho | nu``: a gamma shifted by ``M(s, epsilon, nu)``."""
    offset = hyper.rho_offset(nu)
    if not rho > offset:
        return -math.inf
    return float(stats.gamma.logpdf(rho - offset, hyper.a_rho, scale=1.0 / hyper.b_rho))


def log_invgamma(x, a, b):
    x = np.asarray(x, dtype=float)
    return a * math.log(b) - gammaln(a) - (a + 1.0) * np.log(x) - b / x


def log_dirichlet(w, delta):
    w = np.asarray(w, dtype=float)
    k = w.size
    with np.errstate(divide="ignore"):
        return float(gammaln(k * delta) - k * gammaln(delta) + (delta - 1.0) * np.sum(np.log(w)))


@dataclass
class MixtureState:
    """Snapshot of the no-covariate chain. Labels are 0-based component indices."""

    mu: np.ndarray
    sigma2: np.ndarray
    w: np.ndarray
    labels: np.ndarray
    rho: float
    nu: float

    @property
    def k(self):
        return int(self.mu.size)

    def copy(self):
        return MixtureState(
            self.mu.copy(), self.sigma2.copy(), self.w.copy(), self.labels.copy(), self.rho, self.nu
        )

    def counts(self):
        return np.bincount(self.labels, minlength=self.k)


@dataclass(frozen=True)
class CovHyperparams:
    """Hyperparameters of the covariate-dependent mixture.

    The gating prior covariance is the g-prior ``g * (X^T X)^{-1}``;
    ``(aux_gamma0, aux_xi0, aux_nu0)`` define the auxiliary regression
    model used to propose new components in the split move and default to
    ``10 I``, ``a0`` and ``b0``.
    """

    base: Hyperparams = field(default_factory=Hyperparams)
    g: float = 400.0
    beta0: np.ndarray | None = None
    lambda0: np.ndarray | None = None
    zeta: float = 0.1
    aux_gamma0: np.ndarray | None = None
    aux_xi0: float | None = None
    aux_nu0: float | None = None

    def __post_init__(self):
        if not self.g > 0:
            raise ConfigError("g-prior scale must be positive")
        if not self.zeta > 0:
            raise ConfigError("zeta must be positive")
        if not self.base.nu.is_fixed:
            raise ConfigError("the covariate model uses a fixed nu")

    def resolve(self, p):
        """Fill defaults for a design with ``p`` columns and check definiteness."""
        beta0 = np.zeros(p) if self.beta0 is None else np.asarray(self.beta0, float).reshape(p)
        lambda0 = np.eye(p) if self.lambda0 is None else np.asarray(self.lambda0, float).reshape(p, p)
        aux = 10.0 * np.eye(p + 1) if self.aux_gamma0 is None else np.asarray(self.aux_gamma0, float)
        for name, mat in (("lambda0", lambda0), ("aux_gamma0", aux)):
            if mat.shape[0] != mat.shape[1] or not _is_pd(mat):
                raise ConfigError(f"{name} must be symmetric positive definite")
        return replace(
            self,
            beta0=beta0,
            lambda0=lambda0,
            aux_gamma0=aux.reshape(p + 1, p + 1),
            aux_xi0=self.base.a0 if self.aux_xi0 is None else self.aux_xi0,
            aux_nu0=self.base.b0 if self.aux_nu0 is None else self.aux_nu0,
        )


def _is_pd(mat):
    if not np.allclose(mat, mat.T):
        return False
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass
class CovMixtureState:
    """Snapshot of the covariate chain; ``beta[0]`` is the zero reference vector."""

    mu: np.ndarray
    sigma2: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    labels: np.ndarray
    rho: float
    nu: float = 2.0

    @property
    def k(self):
        return int(self.mu.size)

    def copy(self):
        return CovMixtureState(
            self.mu.copy(), self.sigma2.copy(), self.gamma.copy(), self.beta.copy(),
            self.labels.copy(), self.rho, self.nu,
        )

    def counts(self):
        return np.bincount(self.labels, minlength=self.k)


def validate_state(state, hyper=None, window=None, n=None):
    """Check every state invariant; returns a list of violation codes (empty if ok)."""
    problems = []
    k = state.k
    if k < 1:
        problems.append("k_nonpositive")
    for name in ("mu", "sigma2"):
        arr = getattr(state, name)
        if arr.shape != (k,):
            problems.append(f"{name}_shape")
        elif not np.all(np.isfinite(arr)):
            problems.append(f"{name}_nonfinite")
    if state.sigma2.shape == (k,) and np.any(state.sigma2 <= 0):
        problems.append("sigma2_nonpositive")
    labels = np.asarray(state.labels)
    if n is not None and labels.shape != (n,):
        problems.append("labels_shape")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        problems.append("label_out_of_range")
    if isinstance(state, MixtureState):
        if state.w.shape != (k,):
            problems.append("w_shape")
        else:
            if np.any(state.w < 0):
                problems.append("w_negative")
            if abs(float(np.sum(state.w)) - 1.0) > 1e-12:
                problems.append("w_not_simplex")
    else:
        if state.beta.ndim != 2 or state.beta.shape[0] != k:
            problems.append("beta_shape")
        elif np.any(state.beta[0] != 0.0):
            problems.append("beta_reference_nonzero")
        if state.gamma.ndim != 2 or state.gamma.shape[0] != k:
            problems.append("gamma_shape")
    if not (state.rho > 0 and math.isfinite(state.rho)):
        problems.append("rho_invalid")
    if not state.nu > 0:
        problems.append("nu_invalid")
    if hyper is not None:
        base = hyper.base if isinstance(hyper, CovHyperparams) else hyper
        if base.rho_fixed is None and base.family is Family.POWER_EXPONENTIAL:
            if not state.rho > base.rho_offset(state.nu):
                problems.append("rho_below_offset")
        if state.nu not in base.nu.support:
            problems.append("nu_outside_support")
    if window is not None and state.mu.shape == (k,):
        if not np.all(window.contains(state.mu)):
            problems.append("mu_outside_window")
    return problems


def sample_prior_state(hyper, window, rng, n=0):
    """Draw a no-covariate state from the prior (given the window's rho, nu).

    Locations are drawn by rejection from the windowed DPP density with a
    uniform envelope, which is exact because ``det <= C(0)^K``.
    """
    from .dpp import log_density_unit, prior_count_sample

    k = prior_count_sample(window, rng)
    c0 = window.kernel_at_zero
    while True:
        u = rng.uniform(-0.5, 0.5, size=k)
        log_acc = log_density_unit(window, u) - (1.0 - window.d_app) - k * math.log(c0)
        if math.log(rng.random()) < log_acc:
            break
    mu = window.from_unit(u)[:, 0]
    w = rng.dirichlet(np.full(k, hyper.delta))
    sigma2 = hyper.b0 / rng.gamma(hyper.a0, size=k)
    labels = rng.choice(k, size=n, p=w) if n else np.zeros(0, dtype=np.int64)
    return MixtureState(mu, sigma2, w / w.sum(), labels.astype(np.int64), window.model.rho, window.model.nu)


def state_to_dict(state):
    """Plain-python representation (floats survive ``repr`` round trips exactly)."""
    out = {"kind": "nocov" if isinstance(state, MixtureState) else "cov"}
    for f in fields(state):
        value = getattr(state, f.name)
        out[f.name] = value.tolist() if isinstance(value, np.ndarray) else float(value)
    return out


def state_from_dict(data):
    if data["kind"] == "nocov":
        return MixtureState(
            np.asarray(data["mu"], float), np.asarray(data["sigma2"], float),
            np.asarray(data["w"], float), np.asarray(data["labels"], np.int64),
            float(data["rho"]), float(data["nu"]),
        )
    k = len(data["mu"])
    return CovMixtureState(
        np.asarray(data["mu"], float), np.asarray(data["sigma2"], float),
        np.asarray(data["gamma"], float).reshape(k, -1), np.asarray(data["beta"], float).reshape(k, -1),
        np.asarray(data["labels"], np.int64), float(data["rho"]), float(data["nu"]),
    )
