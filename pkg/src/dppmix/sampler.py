"""Gibbs sampler with reversible-jump split/combine for the repulsive mixture.

One sweep updates, in order: labels, weights, variances, locations (one
random-walk MH step per component, driven by the Schur complement of the
DPP kernel), ``(rho, nu)`` (adaptive MH on ``log(rho - offset)``) and
finally the number of components via a moment-matching split/combine move.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import logsumexp

from . import dpp
from .analysis import Trace
from .model import (
    ConfigError,
    Hyperparams,
    MixtureState,
    log_dirichlet,
    log_invgamma,
    log_prior_rho,
)
from .spectral import Family, ParameterError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
# log densities of Beta(1,1), Beta(1,1), Beta(2,2) proposals for (alpha, beta, r)
_LOG_BETA22_CONST = math.log(6.0)


@dataclass(frozen=True)
class McmcSchedule:
    n_burnin: int = 5000
    n_thin: int = 10
    n_keep: int = 5000
    seed: int = 0
    adapt_target: float = 0.234

    def __post_init__(self):
        if self.n_burnin < 0 or self.n_thin < 1 or self.n_keep < 1:
            raise ConfigError("need n_burnin >= 0, n_thin >= 1 and n_keep >= 1")
        if not 0.0 < self.adapt_target < 1.0:
            raise ConfigError("adapt_target must lie in (0, 1)")

    @property
    def n_iter(self):
        return self.n_burnin + self.n_thin * self.n_keep


class AdaptiveScale:
    """Random-walk scale tuned by a Robbins-Monro recursion on its logarithm.

    Adaptation only happens while ``active``; the step size decays as
    ``min(0.05, t**-0.5)``.
    """

    def __init__(self, scale, target=0.234):
        self.log_scale = math.log(scale)
        self.target = target
        self.active = True
        self.t = 0

    @property
    def scale(self):
        return math.exp(self.log_scale)

    def update(self, accept_prob):
        if not self.active:
            return
        self.t += 1
        step = min(0.05, 1.0 / math.sqrt(self.t))
        self.log_scale += step * (accept_prob - self.target)


def default_window(y, expand=0.2):
    """Data range widened by ``expand`` times the range on each side."""
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ConfigError("an explicit window is required without data")
    lo, hi = float(y.min()), float(y.max())
    span = hi - lo if hi > lo else max(abs(lo), 1.0)
    return lo - expand * span, hi + expand * span


def normal_logpdf_matrix(y, mu, sigma2):
    """``log N(y_i; mu_k, sigma2_k)`` as an ``(n, K)`` array."""
    resid = y[:, None] - mu[None, :]
    return -0.5 * (LOG_2PI + np.log(sigma2)[None, :] + resid * resid / sigma2[None, :])


def sample_categorical(logp, rng):
    """One draw per row of unnormalised log-probabilities."""
    logp = logp - logp.max(axis=1, keepdims=True)
    p = np.exp(logp)
    cum = np.cumsum(p, axis=1)
    u = rng.random(logp.shape[0]) * cum[:, -1]
    draws = (u[:, None] >= cum).sum(axis=1)
    return np.minimum(draws, logp.shape[1] - 1).astype(np.int64)


def mixture_loglik(y, w, mu, sigma2):
    if y.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        logw = np.log(w)
    return float(np.sum(logsumexp(normal_logpdf_matrix(y, mu, sigma2) + logw, axis=1)))


# --- full conditionals -----------------------------------------------------


def update_labels(state, y, rng):
    if y.size == 0:
        return state
    if state.k == 1:
        state.labels[:] = 0
        return state
    with np.errstate(divide="ignore"):
        logp = normal_logpdf_matrix(y, state.mu, state.sigma2) + np.log(state.w)[None, :]
    state.labels = sample_categorical(logp, rng)
    return state


def update_weights(state, hyper, rng):
    if state.k == 1:
        state.w = np.ones(1)
        return state
    w = rng.dirichlet(hyper.delta + state.counts())
    # guard against exact zeros produced by the gamma sampler
    w = np.maximum(w, np.finfo(float).tiny)
    state.w = w / w.sum()
    return state


def update_variances(state, y, hyper, rng):
    counts = state.counts()
    resid = y - state.mu[state.labels] if y.size else y
    ss = np.bincount(state.labels, weights=resid * resid, minlength=state.k) if y.size else np.zeros(state.k)
    shape = hyper.a0 + 0.5 * counts
    rate = hyper.b0 + 0.5 * ss
    state.sigma2 = rate / rng.gamma(shape)
    return state


class _SchurContext:
    """Cholesky factor of the kernel matrix with component ``k`` removed."""

    def __init__(self, window, unit, k):
        self.window = window
        self.others = np.delete(unit, k)
        self.c0 = window.kernel_at_zero
        if self.others.size:
            cm = dpp.kernel_matrix(window, self.others)
            try:
                self.chol = linalg.cholesky(cm, lower=True, check_finite=False)
            except linalg.LinAlgError:
                self.chol = None
                self.pinv = np.linalg.pinv(cm)

    def log_factor(self, u):
        if self.others.size == 0:
            return math.log(self.c0)
        b = dpp.c_app(self.window, self.others - u)
        if self.chol is not None:
            z = linalg.solve_triangular(self.chol, b, lower=True, check_finite=False)
            val = self.c0 - float(z @ z)
        else:
            val = self.c0 - float(b @ self.pinv @ b)
        return math.log(val) if val > 0 else -math.inf


def update_means(state, y, window, rng, scale, resid_offset=None, stats=None):
    """One MH step per location; ``resid_offset`` subtracts a per-item mean shift."""
    r = y if resid_offset is None else y - resid_offset
    k_tot = state.k
    counts = np.bincount(state.labels, minlength=k_tot) if r.size else np.zeros(k_tot, int)
    s1 = np.bincount(state.labels, weights=r, minlength=k_tot) if r.size else np.zeros(k_tot)
    lo, hi = float(window.lo[0]), float(window.hi[0])
    vol = hi - lo
    for k in range(k_tot):
        sd = scale.scale * math.sqrt(state.sigma2[k] / max(counts[k], 1))
        prop = state.mu[k] + sd * rng.standard_normal()
        accept_prob = 0.0
        if lo <= prop <= hi:
            unit = (state.mu - lo) / vol - 0.5
            ctx = _SchurContext(window, unit, k)
            cur = state.mu[k]
            # sum_i -(r_i - m)^2 / (2 sigma2) up to terms free of m
            d_lik = ((prop - cur) * s1[k] - 0.5 * counts[k] * (prop * prop - cur * cur)) / state.sigma2[k]
            log_ratio = ctx.log_factor((prop - lo) / vol - 0.5) - ctx.log_factor(unit[k]) + d_lik
            accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
            if rng.random() < accept_prob:
                state.mu[k] = prop
                if stats is not None:
                    stats.accept("mu")
        if stats is not None:
            stats.attempt("mu")
        scale.update(accept_prob)
    return state


def _log_rho_target(window, mu, hyper, rho, nu):
    lp = log_prior_rho(rho, hyper, nu) + hyper.nu.log_prob(nu)
    if not math.isfinite(lp):
        return -math.inf
    return dpp.log_density_rect(window, mu) + lp


def update_rho_nu(state, window, hyper, rng, scale, stats=None):
    """Adaptive MH on ``eta = log(rho - offset(nu))``, with a uniform proposal for ``nu``.

    Returns ``(state, window)``; the window is rebuilt when a move is accepted.
    """
    if hyper.rho_fixed is not None or hyper.family is not Family.POWER_EXPONENTIAL:
        return state, window
    nu = state.nu
    eta = math.log(state.rho - hyper.rho_offset(nu))
    nu_new = nu if hyper.nu.is_fixed else float(rng.choice(hyper.nu.support))
    eta_new = eta + scale.scale * rng.standard_normal()
    rho_new = hyper.rho_offset(nu_new) + math.exp(eta_new)
    try:
        window_new = window.with_model(hyper.spectral(rho_new, nu_new))
    except (ParameterError, dpp.ExistenceError):
        window_new = None
    accept_prob = 0.0
    if window_new is not None:
        log_ratio = (
            _log_rho_target(window_new, state.mu, hyper, rho_new, nu_new) + eta_new
            - _log_rho_target(window, state.mu, hyper, state.rho, nu) - eta
        )
        if math.isnan(log_ratio):
            log_ratio = -math.inf
        accept_prob = 1.0 if log_ratio >= 0 else math.exp(log_ratio)
        if rng.random() < accept_prob:
            state.rho, state.nu, window = rho_new, nu_new, window_new
            if stats is not None:
                stats.accept("rho")
    if stats is not None:
        stats.attempt("rho")
    scale.update(accept_prob)
    return state, window


# --- reversible jump -------------------------------------------------------


def split_component(w, mu, sigma2, a, b, r):
    """Moment-matching split of one component into two (lower-mean child first)."""
    w1, w2 = a * w, (1.0 - a) * w
    sd = math.sqrt(sigma2)
    mu1 = mu - math.sqrt(w2 / w1) * r * sd
    mu2 = mu + math.sqrt(w1 / w2) * r * sd
    s1 = b * (1.0 - r * r) * w / w1 * sigma2
    s2 = (1.0 - b) * (1.0 - r * r) * w / w2 * sigma2
    return (w1, mu1, s1), (w2, mu2, s2)


def combine_components(c1, c2):
    """Merge two ``(w, mu, sigma2)`` triples preserving weight, mean and second moment.

    Returns the merged triple and the split variables ``(a, b, r)`` that
    reproduce the inputs, ordering the children by their means.
    """
    if c2[1] < c1[1]:
        c1, c2 = c2, c1
    (w1, m1, s1), (w2, m2, s2) = c1, c2
    w = w1 + w2
    mu = (w1 * m1 + w2 * m2) / w
    second = (w1 * (m1 * m1 + s1) + w2 * (m2 * m2 + s2)) / w
    sigma2 = second - mu * mu
    a = w1 / w
    r = (mu - m1) / (math.sqrt(sigma2) * math.sqrt(w2 / w1))
    b = s1 * w1 / ((1.0 - r * r) * w * sigma2)
    return (w, mu, sigma2), (a, b, r)


def log_split_jacobian(w, w1, w2, sigma2, r):
    return 4.0 * math.log(w) - 1.5 * math.log(w1 * w2) + 1.5 * math.log(sigma2) + math.log1p(-r * r)


def _log_proposal_u(a, b, r):
    if not (0 < a < 1 and 0 < b < 1 and 0 < r < 1):
        return -math.inf
    return _LOG_BETA22_CONST + math.log(r) + math.log1p(-r)


def _log_move_probs(k):
    """``log`` of (P(split | K=k), P(combine | K=k+1))."""
    p_split = 1.0 if k == 1 else 0.5
    return math.log(p_split), math.log(0.5)


def log_target_fixed_k(y, w, mu, sigma2, window, hyper):
    """Log posterior of ``(w, mu, sigma2)`` with labels marginalised (up to a constant)."""
    if not np.all(window.contains(mu)):
        return -math.inf
    return (
        mixture_loglik(y, w, mu, sigma2)
        + float(np.sum(log_invgamma(sigma2, hyper.a0, hyper.b0)))
        + log_dirichlet(w, hyper.delta)
        + dpp.log_density_rect(window, mu)
    )


def log_split_ratio(y, old, new, j_split, u, window, hyper):
    """Log acceptance ratio for the split ``old -> new`` (K -> K+1).

    ``old`` and ``new`` are ``(w, mu, sigma2)`` array triples; ``j_split`` is
    the index of the component that was split and ``u = (a, b, r)``.
    """
    k = old[0].size
    a, b, r = u
    log_q = _log_proposal_u(a, b, r)
    if not math.isfinite(log_q):
        return -math.inf
    lt_new = log_target_fixed_k(y, *new, window, hyper)
    if lt_new == -math.inf:
        return -math.inf
    lt_old = log_target_fixed_k(y, *old, window, hyper)
    w = old[0][j_split]
    w1, w2 = a * w, (1.0 - a) * w
    log_p_split, log_p_comb = _log_move_probs(k)
    # combine picks one of (K+1)K/2 unordered pairs, split one of K components
    log_sel = log_p_comb + math.log(2.0) - math.log(k + 1) - log_p_split
    log_jac = log_split_jacobian(w, w1, w2, old[2][j_split], r)
    return lt_new - lt_old + log_jac + log_sel - log_q


def rj_step(state, y, window, hyper, rng, stats=None):
    """One split or combine proposal; labels are redrawn after an accepted move."""
    k = state.k
    do_split = k == 1 or rng.random() < 0.5
    old = (state.w, state.mu, state.sigma2)
    if do_split:
        j = int(rng.integers(k))
        a, b, r = rng.beta(1.0, 1.0), rng.beta(1.0, 1.0), rng.beta(2.0, 2.0)
        c1, c2 = split_component(state.w[j], state.mu[j], state.sigma2[j], a, b, r)
        new = tuple(
            np.append(np.where(np.arange(k) == j, c1[i], arr), c2[i]) for i, arr in enumerate(old)
        )
        log_ratio = log_split_ratio(y, old, new, j, (a, b, r), window, hyper)
        move = "split"
    else:
        i1, i2 = sorted(rng.choice(k, size=2, replace=False))
        merged, u = combine_components(
            (state.w[i1], state.mu[i1], state.sigma2[i1]), (state.w[i2], state.mu[i2], state.sigma2[i2])
        )
        keep = np.arange(k) != i2
        new = tuple(np.where(np.arange(k) == i1, merged[i], arr)[keep] for i, arr in enumerate(old))
        # the reverse split acts on the merged component, at index i1 of the smaller state
        log_ratio = -log_split_ratio(y, new, old, i1, u, window, hyper)
        move = "combine"
    if math.isnan(log_ratio):
        log_ratio = -math.inf
    accepted = log_ratio >= 0 or rng.random() < math.exp(log_ratio)
    if stats is not None:
        stats.attempt(move)
    if accepted:
        state.w, state.mu, state.sigma2 = (np.array(arr, dtype=float) for arr in new)
        state.w = state.w / state.w.sum()
        state.labels = np.zeros(y.size, dtype=np.int64)
        update_labels(state, y, rng)
        if stats is not None:
            stats.accept(move)
    return state


# --- driver ----------------------------------------------------------------


class MoveStats:
    def __init__(self):
        self.counts = {}

    def attempt(self, move):
        self.counts.setdefault(move, [0, 0])[1] += 1

    def accept(self, move):
        self.counts.setdefault(move, [0, 0])[0] += 1

    def rates(self):
        return {m: (a / t if t else float("nan")) for m, (a, t) in sorted(self.counts.items())}


def initial_state(y, hyper, window, rng, k_init=None):
    """Quantile-based starting point; a single central component without data."""
    nu = hyper.nu.support[len(hyper.nu.support) // 2] if not hyper.nu.is_fixed else hyper.nu.support[0]
    if hyper.rho_fixed is not None:
        rho = hyper.rho_fixed
    else:
        rho = hyper.rho_offset(nu) + hyper.a_rho / hyper.b_rho
    lo, hi = float(window.lo[0]), float(window.hi[0])
    n = y.size
    if n == 0:
        return MixtureState(
            np.array([0.5 * (lo + hi)]), np.array([hyper.b0 / max(hyper.a0 - 1.0, 1.0)]),
            np.ones(1), np.zeros(0, np.int64), rho, nu,
        )
    if k_init is None:
        k_init = max(1, min(n, int(round(math.sqrt(n)))))
    k_init = max(1, min(k_init, n))
    order = np.argsort(y, kind="stable")
    chunks = np.array_split(order, k_init)
    mu = np.array([y[c].mean() for c in chunks])
    spread = np.var(y) if n > 1 else 1.0
    sigma2 = np.array([max(np.var(y[c]), 1e-2 * spread, 1e-8) for c in chunks])
    w = np.array([c.size for c in chunks], dtype=float) / n
    labels = np.empty(n, dtype=np.int64)
    for i, c in enumerate(chunks):
        labels[c] = i
    mu = np.clip(mu, lo, hi)
    # break exact ties so the kernel matrix stays nonsingular
    mu = mu + 1e-9 * (hi - lo) * np.arange(mu.size)
    return MixtureState(mu, sigma2, w, labels, rho, nu)


def run_chain(y, hyper, schedule, window_rect, n_trunc=dpp.DEFAULT_TRUNCATION, init=None,
              k_init=None, progress=False):
    """Run the full sampler and collect a :class:`Trace` of kept states.

    ``window_rect`` is ``(lo, hi)``; pass an empty ``y`` for prior-only runs.
    """
    y = np.asarray(y, dtype=float).ravel()
    if not isinstance(hyper, Hyperparams):
        raise ConfigError("hyper must be a Hyperparams instance")
    rng = np.random.default_rng(schedule.seed)
    lo, hi = float(window_rect[0]), float(window_rect[1])
    if y.size and (y.min() < lo or y.max() > hi):
        raise ConfigError("the window must contain all observations")
    state = init.copy() if init is not None else None
    nu0 = hyper.nu.support[0] if state is None else state.nu
    rho0 = (hyper.rho_fixed or 1.0) if state is None else state.rho
    window = dpp.build_window(hyper.spectral(rho0, nu0), (lo, hi), n_trunc)
    if state is None:
        state = initial_state(y, hyper, window, rng, k_init)
    window = window.with_model(hyper.spectral(state.rho, state.nu))

    mu_scale = AdaptiveScale(1.0, schedule.adapt_target)
    rho_scale = AdaptiveScale(0.5, schedule.adapt_target)
    stats = MoveStats()
    trace = Trace(n=y.size, kind="nocov")
    for it in range(schedule.n_iter):
        if it == schedule.n_burnin:
            mu_scale.active = rho_scale.active = False
        update_labels(state, y, rng)
        update_weights(state, hyper, rng)
        update_variances(state, y, hyper, rng)
        update_means(state, y, window, rng, mu_scale, stats=stats)
        state, window = update_rho_nu(state, window, hyper, rng, rho_scale, stats=stats)
        rj_step(state, y, window, hyper, rng, stats=stats)
        if it >= schedule.n_burnin and (it - schedule.n_burnin + 1) % schedule.n_thin == 0:
            trace.append(state.copy(), it)
        if progress and (it + 1) % 1000 == 0:
            logger.info("iteration %d/%d, K=%d, rho=%.3f", it + 1, schedule.n_iter, state.k, state.rho)
    trace.accept = stats.counts
    trace.scales = {"mu": mu_scale.scale, "rho": rho_scale.scale}
    trace.meta = {"seed": schedule.seed, "window": [lo, hi], "n_trunc": n_trunc}
    return trace
