"""Posterior summaries computed from a stored chain."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

logger = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class Trace:
    """Kept states of one chain plus the accumulated co-clustering counts."""

    n: int
    kind: str = "nocov"
    states: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    coclust: np.ndarray | None = None
    accept: dict = field(default_factory=dict)
    scales: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.coclust is None:
            self.coclust = np.zeros((self.n, self.n), dtype=np.int64)

    def append(self, state, iteration):
        self.states.append(state)
        self.iterations.append(int(iteration))
        if self.n:
            lab = state.labels
            self.coclust += lab[:, None] == lab[None, :]

    def __len__(self):
        return len(self.states)

    @property
    def k(self):
        return np.array([s.k for s in self.states], dtype=np.int64)

    @property
    def rho(self):
        return np.array([s.rho for s in self.states])

    @property
    def nu(self):
        return np.array([s.nu for s in self.states])

    @property
    def labels(self):
        return np.array([s.labels for s in self.states], dtype=np.int64).reshape(len(self), self.n)

    def acceptance_rates(self):
        return {m: (a / t if t else float("nan")) for m, (a, t) in sorted(self.accept.items())}


def merge_traces(traces):
    """Pool several chains on the same data into one trace."""
    out = Trace(n=traces[0].n, kind=traces[0].kind)
    for tr in traces:
        out.states.extend(tr.states)
        out.iterations.extend(tr.iterations)
        out.coclust = out.coclust + tr.coclust
        for move, (a, t) in tr.accept.items():
            acc = out.accept.setdefault(move, [0, 0])
            acc[0] += a
            acc[1] += t
    return out


# --- point estimate of the partition ---------------------------------------


@dataclass(frozen=True)
class PartitionEstimate:
    labels: np.ndarray
    n_groups: int
    loss: float
    iteration: int


def canonical_labels(labels):
    """Relabel groups by order of first appearance, starting at 0.

    The partition estimate adds one so its groups are numbered from 1.
    """
    _, first, inv = np.unique(labels, return_index=True, return_inverse=True)
    rank = np.empty(first.size, dtype=np.int64)
    rank[np.argsort(first, kind="stable")] = np.arange(first.size)
    return rank[inv.ravel()]


def coclustering_probabilities(trace):
    return trace.coclust / float(len(trace))


def binder_loss(labels, psm):
    """Binder loss (equal costs) of a partition against co-clustering probabilities."""
    same = labels[:, None] == labels[None, :]
    iu = np.triu_indices(labels.size, k=1)
    return float(np.abs(same[iu] - psm[iu]).sum())


def binder_partition(trace):
    """Visited partition minimising the posterior expected Binder loss.

    Ties go to the earliest kept iteration.
    """
    if len(trace) == 0:
        raise ValueError("the trace holds no kept samples")
    psm = coclustering_probabilities(trace)
    iu = np.triu_indices(trace.n, k=1)
    target = psm[iu]
    best, best_loss = 0, math.inf
    for m, state in enumerate(trace.states):
        lab = state.labels
        same = (lab[:, None] == lab[None, :])[iu]
        loss = float(np.abs(same - target).sum())
        if loss < best_loss - 1e-9:
            best, best_loss = m, loss
    labels = canonical_labels(trace.states[best].labels) + 1
    n_groups = int(labels.max()) if labels.size else 0
    return PartitionEstimate(labels, n_groups, best_loss, trace.iterations[best])


# --- per-state densities ---------------------------------------------------


def gating_weights(beta, x):
    """Softmax of ``beta_k^T x`` over components; works row-wise for a design matrix."""
    scores = np.atleast_2d(x) @ np.asarray(beta).T
    scores = scores - scores.max(axis=1, keepdims=True)
    w = np.exp(scores)
    w /= w.sum(axis=1, keepdims=True)
    return w[0] if np.ndim(x) == 1 else w


def _state_log_components(state, t, x=None):
    """``log w_k(x) + log N(t; m_k(x), sigma2_k)`` with shape ``(len(t), K)``.

    For covariate states ``x`` is either one covariate vector (shared by
    every ``t``) or a design matrix aligned with ``t``.
    """
    t = np.asarray(t, dtype=float)
    if hasattr(state, "beta"):
        if x is None:
            raise ValueError("covariates are required for a covariate-model state")
        xm = np.atleast_2d(np.asarray(x, dtype=float))
        if xm.shape[0] == 1 and t.size != 1:
            xm = np.repeat(xm, t.size, axis=0)
        logw = np.log(gating_weights(state.beta, xm))
        mean = state.mu[None, :] + xm @ state.gamma.T
    else:
        with np.errstate(divide="ignore"):
            logw = np.log(state.w)[None, :]
        mean = state.mu[None, :]
    resid = t[:, None] - mean
    return logw - 0.5 * (_LOG_2PI + np.log(state.sigma2)[None, :] + resid * resid / state.sigma2[None, :])


def _allocated_log_ordinate(state, y, X=None):
    lab = state.labels
    mean = state.mu[lab]
    if hasattr(state, "beta"):
        mean = mean + np.sum(np.asarray(X, float) * state.gamma[lab], axis=1)
    s2 = state.sigma2[lab]
    resid = y - mean
    return -0.5 * (_LOG_2PI + np.log(s2) + resid * resid / s2)


def log_ordinates(trace, y, X=None, ordinate="mixture"):
    """``log f(y_i | theta_m)`` for every kept state, shape ``(M, n)``.

    ``mixture`` uses the full mixture density at ``y_i``; ``allocated``
    uses the density of the component item ``i`` is assigned to.
    """
    y = np.asarray(y, dtype=float)
    if ordinate == "mixture":
        return np.array([logsumexp(_state_log_components(s, y, X), axis=1) for s in trace.states])
    if ordinate == "allocated":
        return np.array([_allocated_log_ordinate(s, y, X) for s in trace.states])
    raise ValueError(f"unknown ordinate {ordinate!r}")


@dataclass(frozen=True)
class LpmlResult:
    lpml: float
    log_cpo: np.ndarray
    flagged: np.ndarray


def lpml(trace, y, X=None, ordinate="allocated"):
    """Log pseudo-marginal likelihood with harmonic-mean CPO estimates.

    See :func:`log_ordinates` for the two choices of ordinate.
    """
    if len(trace) < 2:
        raise ValueError("LPML needs at least two kept samples")
    logf = log_ordinates(trace, y, X, ordinate)
    flagged = np.any(~np.isfinite(logf), axis=0)
    m = logf.shape[0]
    log_cpo = np.empty(logf.shape[1])
    for i in range(logf.shape[1]):
        col = logf[:, i]
        ok = np.isfinite(col)
        if not np.any(ok):
            log_cpo[i] = -math.inf
            continue
        m_i = m if ok.all() else int(ok.sum())
        log_cpo[i] = math.log(m_i) - logsumexp(-col[ok])
    if np.any(flagged):
        logger.warning("%d items had zero ordinates in some samples", int(flagged.sum()))
    return LpmlResult(float(log_cpo.sum()), log_cpo, flagged)


def fitted_values(trace, y, X=None, kind="allocated"):
    """Posterior mean fitted value per item.

    ``allocated`` averages the mean of the component each item is assigned
    to; ``marginal`` averages the mixture mean ``sum_k w_k(x) m_k(x)``.
    """
    y = np.asarray(y, dtype=float)
    total = np.zeros(y.size)
    for s in trace.states:
        if hasattr(s, "beta"):
            mean = s.mu[None, :] + np.asarray(X, float) @ s.gamma.T
            if kind == "allocated":
                total += mean[np.arange(y.size), s.labels]
            else:
                total += np.sum(gating_weights(s.beta, np.asarray(X, float)) * mean, axis=1)
        else:
            if kind == "allocated":
                total += s.mu[s.labels]
            else:
                total += float(np.dot(s.w, s.mu))
    return total / len(trace)


def mse(trace, y, X=None, kind="allocated"):
    """Sum of squared errors between data and posterior fitted values."""
    if len(trace) == 0:
        raise ValueError("the trace holds no kept samples")
    resid = np.asarray(y, dtype=float) - fitted_values(trace, y, X, kind)
    return float(np.sum(resid * resid))


def root_mse(trace, y, X=None, kind="allocated"):
    return math.sqrt(mse(trace, y, X, kind))


@dataclass(frozen=True)
class PredictiveDensity:
    grid: np.ndarray
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray


def predictive_density(trace, grid, x=None, level=0.9):
    """Pointwise posterior mean and equal-tailed band of the mixture density on a grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    dens = np.array([
        np.exp(logsumexp(_state_log_components(s, grid, x), axis=1)) for s in trace.states
    ])
    tail = 0.5 * (1.0 - level)
    lower, upper = np.quantile(dens, [tail, 1.0 - tail], axis=0)
    mean = dens.mean(axis=0)
    return PredictiveDensity(grid, mean, np.minimum(lower, mean), np.maximum(upper, mean))


@dataclass(frozen=True)
class KSummary:
    values: np.ndarray
    pmf: np.ndarray
    mean: float
    var: float
    mode: int


def k_summary(trace_or_k):
    ks = trace_or_k.k if isinstance(trace_or_k, Trace) else np.asarray(trace_or_k, dtype=np.int64)
    values, counts = np.unique(ks, return_counts=True)
    pmf = counts / counts.sum()
    mean = float(ks.mean())
    return KSummary(values, pmf, mean, float(ks.var()), int(values[np.argmax(counts)]))


def total_variation(pmf_a, pmf_b):
    """TV distance between two pmfs given as ``{value: prob}`` mappings."""
    keys = set(pmf_a) | set(pmf_b)
    return 0.5 * sum(abs(pmf_a.get(k, 0.0) - pmf_b.get(k, 0.0)) for k in keys)
