"""Gibbs sampler for the mixture of regressions with softmax gating.

Component ``k`` has location ``mu_k``, regression slopes ``gamma_k``,
variance ``sigma2_k`` and gating vector ``beta_k``; ``beta[0]`` is held at
zero.  The target is written for labelled components, so the DPP
contributes ``f(mu) / K!``.  Changes of ``K`` use a split/combine pair.
A split divides the items of one component (the new component may get
none), draws ``(mu, gamma, sigma2)`` for both halves from auxiliary
normal-inverse-gamma posteriors and the new gating vector from a Laplace
approximation to its conditional; a combine merges two components and
redraws the survivor the same way.  The reference component is never
deleted."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import gammaln, logsumexp

from . import dpp
from .analysis import Trace
from .model import ConfigError, CovHyperparams, CovMixtureState, log_invgamma
from .sampler import (
    AdaptiveScale,
    McmcSchedule,
    MoveStats,
    default_window,
    sample_categorical,
    update_means,
    update_rho_nu,
)

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CovData:
    """Responses, design matrix and the fixed prior matrices derived from them.

    ``sigma0`` is the g-prior covariance ``g (X^T X)^{-1}`` of the gating
    vectors; inverses and log-determinants are cached for the sampler.
    """

    y: np.ndarray
    X: np.ndarray
    sigma0: np.ndarray
    sigma0_inv: np.ndarray
    logdet_sigma0: float
    lambda0_inv: np.ndarray
    logdet_lambda0: float
    aux_prec: np.ndarray

    @property
    def n(self):
        return self.y.size

    @property
    def p(self):
        return self.X.shape[1]


def prepare_data(y, X, hyper):
    """Validate ``(y, X)`` against resolved hyperparameters and cache prior matrices."""
    y = np.asarray(y, dtype=float).ravel()
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] != y.size:
        raise ConfigError("design matrix and response have different lengths")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ConfigError("missing or non-finite entries in the data")
    xtx = X.T @ X
    try:
        chol = linalg.cho_factor(xtx, lower=True)
    except linalg.LinAlgError as exc:
        raise ConfigError("X^T X is singular") from exc
    if np.linalg.cond(xtx) > 1e12:
        raise ConfigError("X^T X is numerically singular")
    inv = linalg.cho_solve(chol, np.eye(X.shape[1]))
    g = hyper.g
    sigma0 = g * 0.5 * (inv + inv.T)
    if hyper.lambda0.shape != (X.shape[1],) * 2:
        raise ConfigError("lambda0 does not match the number of covariates")
    return CovData(
        y, X, sigma0, xtx / g, float(np.linalg.slogdet(sigma0)[1]),
        linalg.inv(hyper.lambda0), float(np.linalg.slogdet(hyper.lambda0)[1]),
        linalg.inv(hyper.aux_gamma0),
    )


def _mvn_logpdf(x, mean, cov_inv, logdet_cov):
    d = x - mean
    return -0.5 * (x.size * LOG_2PI + logdet_cov + float(d @ cov_inv @ d))


# --- full conditionals -----------------------------------------------------


def log_gating(beta, X):
    """``log w_k(x_i)`` as an ``(n, K)`` array."""
    scores = X @ beta.T
    return scores - logsumexp(scores, axis=1, keepdims=True)


def component_means(state, X):
    return state.mu[None, :] + X @ state.gamma.T


def log_complete_lik(state, data, flat=False):
    """``sum_i log w_{s_i}(x_i) + log N(y_i; ...)``; the normal part is dropped if ``flat``."""
    if data.n == 0:
        return 0.0
    idx = np.arange(data.n)
    total = float(np.sum(log_gating(state.beta, data.X)[idx, state.labels]))
    if not flat:
        s2 = state.sigma2[state.labels]
        resid = data.y - state.mu[state.labels] - np.sum(data.X * state.gamma[state.labels], axis=1)
        total += float(np.sum(-0.5 * (LOG_2PI + np.log(s2) + resid * resid / s2)))
    return total


def update_labels_cov(state, data, rng, flat=False):
    if data.n == 0:
        return state
    logp = log_gating(state.beta, data.X)
    if not flat:
        resid = data.y[:, None] - component_means(state, data.X)
        logp = logp - 0.5 * (np.log(state.sigma2)[None, :] + resid * resid / state.sigma2[None, :])
    state.labels = sample_categorical(logp, rng)
    return state


def nig_posterior(Z, r, prec0, a0, b0):
    """Normal-inverse-gamma posterior for ``r = Z theta + e`` with ``theta | s2 ~ N(0, s2 prec0^{-1})``.

    Returns ``(V, m, a, b)`` with ``theta | s2 ~ N(m, s2 V)`` and
    ``s2 ~ IG(a, b)``.
    """
    prec = prec0 + Z.T @ Z
    V = linalg.inv(prec)
    V = 0.5 * (V + V.T)
    m = V @ (Z.T @ r)
    a = a0 + 0.5 * r.size
    b = b0 + 0.5 * max(float(r @ r - m @ prec @ m), 0.0)
    return V, m, a, b


def update_gamma_sigma(state, data, hyper, rng, flat=False):
    """Joint conjugate draw of ``(gamma_k, sigma2_k)`` given the residuals ``y - mu_k``."""
    base = hyper.base
    lam_inv = data.lambda0_inv
    for k in range(state.k):
        if flat or data.n == 0:
            sel = np.zeros(0, dtype=np.int64)
        else:
            sel = np.flatnonzero(state.labels == k)
        Z = data.X[sel] if sel.size else np.zeros((0, data.p))
        r = data.y[sel] - state.mu[k] if sel.size else np.zeros(0)
        V, m, a, b = nig_posterior(Z, r, lam_inv, base.a0, base.b0)
        s2 = b / rng.gamma(a)
        state.sigma2[k] = s2
        state.gamma[k] = rng.multivariate_normal(m, s2 * V, method="cholesky")
    return state


def _log_beta_target(beta, k, labels, X, hyper, data):
    """Gating log likelihood plus the normal prior of ``beta_k``."""
    lg = log_gating(beta, X)
    lik = float(np.sum(lg[np.arange(labels.size), labels])) if labels.size else 0.0
    d = beta[k] - hyper.beta0
    return lik - 0.5 * float(d @ data.sigma0_inv @ d)


def update_beta(state, data, hyper, rng, stats=None):
    """Random-walk MH on each non-reference gating vector with covariance ``zeta I``."""
    sd = math.sqrt(hyper.zeta)
    for k in range(1, state.k):
        prop = state.beta.copy()
        prop[k] = state.beta[k] + sd * rng.standard_normal(data.p)
        log_ratio = (
            _log_beta_target(prop, k, state.labels, data.X, hyper, data)
            - _log_beta_target(state.beta, k, state.labels, data.X, hyper, data)
        )
        if stats is not None:
            stats.attempt("beta")
        if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
            state.beta = prop
            if stats is not None:
                stats.accept("beta")
    return state


# --- reversible jump -------------------------------------------------------


def gating_mode(X, target, log_c, hyper, data, max_iter=100, tol=1e-6):
    """Mode and curvature of the conditional of a new gating vector.

    With the other gating vectors fixed, item ``i`` picks the new
    component with probability ``e^a / (e^a + C_i)``, ``a = beta^T x_i``
    and ``log C_i = log_c[i]``; ``target`` flags the items it owns.  The
    log conditional is concave, so damped Newton steps converge; returns
    ``(mode, cov)`` with ``cov = (-H)^{-1}``.
    """
    beta0, s0_inv = hyper.beta0, data.sigma0_inv
    t = target.astype(float)

    def objective(b):
        a = X @ b
        d = b - beta0
        return float(t @ a - np.sum(np.logaddexp(a, log_c))) - 0.5 * float(d @ s0_inv @ d)

    beta = beta0.copy()
    f_cur = objective(beta)
    for _ in range(max_iter):
        a = X @ beta
        prob = np.exp(a - np.logaddexp(a, log_c))
        grad = X.T @ (t - prob) - s0_inv @ (beta - beta0)
        if np.linalg.norm(grad) < tol:
            break
        hess = -(X.T * (prob * (1.0 - prob))) @ X - s0_inv
        step = np.linalg.solve(-hess, grad)
        t_step = 1.0
        while t_step > 1e-8:
            cand = beta + t_step * step
            f_new = objective(cand)
            if f_new >= f_cur - 1e-12:
                break
            t_step *= 0.5
        beta, f_cur = cand, f_new
    a = X @ beta
    prob = np.exp(a - np.logaddexp(a, log_c))
    neg_hess = (X.T * (prob * (1.0 - prob))) @ X + s0_inv
    try:
        cov = linalg.inv(neg_hess)
        cov = 0.5 * (cov + cov.T)
        np.linalg.cholesky(cov)
    except (linalg.LinAlgError, np.linalg.LinAlgError):
        cov = data.sigma0
    return beta, cov


@dataclass(frozen=True)
class AuxProposal:
    """Auxiliary normal-inverse-gamma posterior for ``(mu, gamma, sigma2)`` of one component."""

    V: np.ndarray
    prec: np.ndarray
    m: np.ndarray
    a: float
    b: float

    def sample(self, rng):
        s2 = self.b / rng.gamma(self.a)
        theta = rng.multivariate_normal(self.m, s2 * self.V, method="cholesky")
        return theta[0], theta[1:], s2

    def log_density(self, mu, gamma, s2):
        theta = np.concatenate(([mu], gamma))
        _, logdet_v = np.linalg.slogdet(self.V)
        lp = float(log_invgamma(s2, self.a, self.b))
        return lp + _mvn_logpdf(theta, self.m, self.prec / s2, theta.size * math.log(s2) + logdet_v)


def aux_proposal(data, items, hyper):
    Z = np.column_stack([np.ones(items.size), data.X[items]])
    prec0 = data.aux_prec
    V, m, a, b = nig_posterior(Z, data.y[items], prec0, hyper.aux_xi0, hyper.aux_nu0)
    return AuxProposal(V, prec0 + Z.T @ Z, m, a, b)


@dataclass(frozen=True)
class GatingProposal:
    """Laplace approximation to the conditional of a new gating vector."""

    mode: np.ndarray
    cov: np.ndarray

    def sample(self, rng):
        return rng.multivariate_normal(self.mode, self.cov, method="cholesky")

    def log_density(self, beta):
        _, logdet = np.linalg.slogdet(self.cov)
        return _mvn_logpdf(beta, self.mode, linalg.inv(self.cov), logdet)


def gating_proposal(small, items, data, hyper):
    """Gating proposal for a component taking ``items`` away from the components of ``small``."""
    target = np.zeros(data.n, dtype=bool)
    target[items] = True
    log_c = logsumexp(data.X @ small.beta.T, axis=1)
    return GatingProposal(*gating_mode(data.X, target, log_c, hyper, data))


def log_prior_cov(state, window, hyper, data):
    """Labelled prior of ``(K, theta)`` given ``(rho, nu)``, up to a constant."""
    base = hyper.base
    if not np.all(window.contains(state.mu)):
        return -math.inf
    lp = dpp.log_density_rect(window, state.mu) - gammaln(state.k + 1)
    lp += float(np.sum(log_invgamma(state.sigma2, base.a0, base.b0)))
    p = data.p
    for k in range(state.k):
        s2 = state.sigma2[k]
        lp += _mvn_logpdf(state.gamma[k], np.zeros(p), data.lambda0_inv / s2, p * math.log(s2) + data.logdet_lambda0)
    for k in range(1, state.k):
        lp += _mvn_logpdf(state.beta[k], hyper.beta0, data.sigma0_inv, data.logdet_sigma0)
    return lp


# bipartition proposal: empty new component, ordered cut, or fair coin
PART_EMPTY, PART_CUT, PART_COIN = 0.25, 0.5, 0.25


def _ordered_members(state, parent, data):
    """Items of ``parent`` sorted by their residual under the parent's slopes."""
    members = np.flatnonzero(state.labels == parent)
    resid = data.y[members] - data.X[members] @ state.gamma[parent]
    return members[np.argsort(resid, kind="stable")]


def draw_bipartition(ordered, rng):
    """Subset of ``ordered`` that moves to the new component."""
    n = ordered.size
    u = rng.random()
    if u < PART_EMPTY:
        return ordered[:0]
    if u < PART_EMPTY + PART_CUT:
        m = int(rng.integers(0, n + 1))
        return ordered[:m] if rng.random() < 0.5 else ordered[n - m:]
    return ordered[rng.random(n) < 0.5]


def log_bipartition_prob(ordered, moved):
    """Log probability that :func:`draw_bipartition` returns the set ``moved``."""
    n, m = ordered.size, moved.size
    chosen = set(moved.tolist())
    cuts = int(set(ordered[:m].tolist()) == chosen) + int(set(ordered[n - m:].tolist()) == chosen)
    terms = [math.log(PART_COIN) - n * math.log(2.0)]
    if m == 0:
        terms.append(math.log(PART_EMPTY))
    if cuts:
        terms.append(math.log(PART_CUT * cuts / (2.0 * (n + 1))))
    return float(logsumexp(terms))


def _theta(state, k):
    return state.mu[k], state.gamma[k], state.sigma2[k]


def log_split_ratio_cov(small, big, parent, pos, data, window, hyper, flat=False):
    """Log acceptance ratio of the split ``small -> big``.

    ``parent`` indexes the split component in ``small``; the new component
    sits at index ``pos >= 1`` of ``big`` and owns the items moved out of
    the parent (possibly none).  The split redraws the parent's
    ``(mu, gamma, sigma2)`` from the auxiliary posterior of the items it
    keeps, and the combine redraws the survivor's from the merged items.
    """
    k = small.k
    big_parent = parent if parent < pos else parent + 1
    moved = np.flatnonzero(big.labels == pos)
    kept = np.flatnonzero(big.labels == big_parent)
    merged = np.flatnonzero(small.labels == parent)
    lt_big = log_prior_cov(big, window, hyper, data)
    if lt_big == -math.inf:
        return -math.inf
    lt_big += log_complete_lik(big, data, flat)
    lt_small = log_prior_cov(small, window, hyper, data) + log_complete_lik(small, data, flat)
    # combine: 1/2, then 1/k deleted and 1/k survivor; split: parent 1/k, subset, slot 1/k
    log_rev = math.log(0.5) + aux_proposal(data, merged, hyper).log_density(*_theta(small, parent))
    log_fwd = 0.0 if k == 1 else math.log(0.5)
    log_fwd += log_bipartition_prob(_ordered_members(small, parent, data), moved)
    log_fwd += aux_proposal(data, kept, hyper).log_density(*_theta(big, big_parent))
    log_fwd += aux_proposal(data, moved, hyper).log_density(*_theta(big, pos))
    log_fwd += gating_proposal(small, moved, data, hyper).log_density(big.beta[pos])
    return lt_big - lt_small + log_rev - log_fwd


def _split_state(state, parent, pos, moved, theta_parent, theta_new, beta_new):
    """Copy of ``state`` with a component inserted at ``pos`` that takes over ``moved``."""
    labels = state.labels.copy()
    labels[labels >= pos] += 1
    labels[moved] = pos
    mu, gamma, s2 = theta_new
    new = CovMixtureState(
        np.insert(state.mu, pos, mu), np.insert(state.sigma2, pos, s2),
        np.insert(state.gamma, pos, gamma, axis=0), np.insert(state.beta, pos, beta_new, axis=0),
        labels, state.rho, state.nu,
    )
    bp = parent if parent < pos else parent + 1
    new.mu[bp], new.gamma[bp], new.sigma2[bp] = theta_parent
    return new


def _combine_state(state, j1, j2, theta):
    """Copy of ``state`` without component ``j1``; its items join ``j2``, which takes ``theta``."""
    labels = state.labels.copy()
    labels[labels == j1] = j2
    labels[labels > j1] -= 1
    new = CovMixtureState(
        np.delete(state.mu, j1), np.delete(state.sigma2, j1),
        np.delete(state.gamma, j1, axis=0), np.delete(state.beta, j1, axis=0),
        labels, state.rho, state.nu,
    )
    keep = j2 if j2 < j1 else j2 - 1
    new.mu[keep], new.gamma[keep], new.sigma2[keep] = theta
    return new, keep


def rj_step_cov(state, data, window, hyper, rng, stats=None, flat=False):
    """One split or combine proposal; returns the (possibly new) state."""
    k = state.k
    do_split = k == 1 or rng.random() < 0.5
    if do_split:
        parent = int(rng.integers(k))
        ordered = _ordered_members(state, parent, data)
        moved = draw_bipartition(ordered, rng)
        kept = np.setdiff1d(ordered, moved)
        pos = int(rng.integers(1, k + 1))
        theta_parent = aux_proposal(data, kept, hyper).sample(rng)
        theta_new = aux_proposal(data, moved, hyper).sample(rng)
        beta_new = gating_proposal(state, moved, data, hyper).sample(rng)
        new = _split_state(state, parent, pos, moved, theta_parent, theta_new, beta_new)
        log_ratio = log_split_ratio_cov(state, new, parent, pos, data, window, hyper, flat)
        move = "split"
    else:
        j1 = int(rng.integers(1, k))
        j2 = int(rng.choice(np.delete(np.arange(k), j1)))
        merged = np.flatnonzero((state.labels == j1) | (state.labels == j2))
        theta = aux_proposal(data, merged, hyper).sample(rng)
        new, parent = _combine_state(state, j1, j2, theta)
        # the split that would undo this combine
        log_ratio = -log_split_ratio_cov(new, state, parent, j1, data, window, hyper, flat)
        move = "combine"
    if math.isnan(log_ratio):
        log_ratio = -math.inf
    if stats is not None:
        stats.attempt(move)
    if log_ratio >= 0 or rng.random() < math.exp(log_ratio):
        if stats is not None:
            stats.accept(move)
        return new
    return state


# --- driver ----------------------------------------------------------------


def initial_state_cov(data, hyper, window, k_init=None):
    base = hyper.base
    nu = base.nu.support[0]
    rho = base.rho_fixed if base.rho_fixed is not None else base.rho_offset(nu) + base.a_rho / base.b_rho
    lo, hi = float(window.lo[0]), float(window.hi[0])
    n, p = data.n, data.p
    if k_init is None:
        k_init = max(1, min(n, int(round(math.sqrt(n)))))
    k_init = max(1, min(k_init, max(n, 1)))
    if n == 0:
        mu = np.array([0.5 * (lo + hi)])
        sigma2 = np.array([base.b0 / max(base.a0 - 1.0, 1.0)])
        labels = np.zeros(0, np.int64)
    else:
        order = np.argsort(data.y, kind="stable")
        chunks = np.array_split(order, k_init)
        mu = np.array([data.y[c].mean() for c in chunks])
        spread = np.var(data.y) if n > 1 else 1.0
        sigma2 = np.array([max(np.var(data.y[c]), 1e-2 * spread, 1e-8) for c in chunks])
        labels = np.empty(n, dtype=np.int64)
        for i, c in enumerate(chunks):
            labels[c] = i
        mu = np.clip(mu, lo, hi) + 1e-9 * (hi - lo) * np.arange(mu.size)
    k = mu.size
    return CovMixtureState(mu, sigma2, np.zeros((k, p)), np.zeros((k, p)), labels, rho, nu)


def run_chain_cov(y, X, hyper, schedule, window_rect=None, n_trunc=dpp.DEFAULT_TRUNCATION, init=None,
                  k_init=None, flat=False, progress=False):
    """Run the covariate sampler and collect a :class:`Trace` of kept states.

    ``flat`` drops the normal likelihood (the gating terms stay), which
    leaves the prior on ``(K, theta)`` invariant; it is meant for checking
    the trans-dimensional moves.
    """
    if not isinstance(hyper, CovHyperparams):
        raise ConfigError("hyper must be a CovHyperparams instance")
    if not isinstance(schedule, McmcSchedule):
        raise ConfigError("schedule must be an McmcSchedule")
    data0 = np.asarray(X, dtype=float)
    p = data0.shape[1] if data0.ndim == 2 else 1
    hyper = hyper.resolve(p)
    data = prepare_data(y, X, hyper)
    base = hyper.base
    if window_rect is None:
        window_rect = default_window(data.y)
    lo, hi = float(window_rect[0]), float(window_rect[1])
    rng = np.random.default_rng(schedule.seed)
    nu = base.nu.support[0]
    rho0 = base.rho_fixed if base.rho_fixed is not None else base.rho_offset(nu) + base.a_rho / base.b_rho
    window = dpp.build_window(base.spectral(rho0, nu), (lo, hi), n_trunc)
    state = init.copy() if init is not None else initial_state_cov(data, hyper, window, k_init)
    window = window.with_model(base.spectral(state.rho, state.nu))

    mu_scale = AdaptiveScale(1.0, schedule.adapt_target)
    rho_scale = AdaptiveScale(0.5, schedule.adapt_target)
    stats = MoveStats()
    trace = Trace(n=data.n, kind="cov")
    empty = np.zeros(0)
    for it in range(schedule.n_iter):
        if it == schedule.n_burnin:
            mu_scale.active = rho_scale.active = False
        update_labels_cov(state, data, rng, flat)
        update_gamma_sigma(state, data, hyper, rng, flat)
        update_beta(state, data, hyper, rng, stats)
        if flat:
            update_means(state, empty, window, rng, mu_scale, stats=stats)
        else:
            offset = np.sum(data.X * state.gamma[state.labels], axis=1)
            update_means(state, data.y, window, rng, mu_scale, resid_offset=offset, stats=stats)
        state, window = update_rho_nu(state, window, base, rng, rho_scale, stats=stats)
        state = rj_step_cov(state, data, window, hyper, rng, stats, flat)
        if it >= schedule.n_burnin and (it - schedule.n_burnin + 1) % schedule.n_thin == 0:
            trace.append(state.copy(), it)
        if progress and (it + 1) % 1000 == 0:
            logger.info("iteration %d/%d, K=%d", it + 1, schedule.n_iter, state.k)
    trace.accept = stats.counts
    trace.scales = {"mu": mu_scale.scale, "rho": rho_scale.scale}
    trace.meta = {"seed": schedule.seed, "window": [lo, hi], "n_trunc": n_trunc}
    return trace
