"""Bundled and synthetic datasets used by the demos and the acceptance suite."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np


def load_galaxy():
    """Velocities of 82 galaxies, in thousands of km/s."""
    with resources.files("dppmix.data").joinpath("galaxy.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    return np.array([float(r["velocity"]) for r in rows])


@dataclass(frozen=True)
class Simulated:
    y: np.ndarray
    labels: np.ndarray
    X: np.ndarray | None = None


def eight_component_means(k=8, lo=-10.0, hi=10.0):
    """``k`` evenly spaced bin centres in ``(lo, hi)``."""
    edges = np.linspace(lo, hi, k + 1)
    return 0.5 * (edges[:-1] + edges[1:])


def simulate_eight(seed=0, n=100, sigma2=0.05):
    """Equal-weight mixture of 8 Gaussians with evenly spaced means."""
    rng = np.random.default_rng(seed)
    means = eight_component_means()
    labels = rng.permutation(np.arange(n) % means.size)
    y = means[labels] + np.sqrt(sigma2) * rng.standard_normal(n)
    return Simulated(y, labels)


def simulate_covariate_mixture(seed=0, n=300):
    """Three-component mixture of experts with two covariates.

    Gating favours component 1 for small ``x1``, 2 for large ``x1`` and 3
    for large ``x2``; each component has its own intercept and slopes.
    """
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((n, 2))
    beta = np.array([[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]])
    scores = X @ beta.T
    probs = np.exp(scores - scores.max(axis=1, keepdims=True))
    probs /= probs.sum(axis=1, keepdims=True)
    cum = probs.cumsum(axis=1)
    labels = np.minimum((rng.random(n)[:, None] > cum).sum(axis=1), 2)
    mu = np.array([-6.0, 0.0, 6.0])
    gamma = np.array([[0.5, -0.5], [-0.5, 0.5], [0.5, 0.5]])
    sigma2 = 0.25
    y = mu[labels] + np.sum(X * gamma[labels], axis=1) + np.sqrt(sigma2) * rng.standard_normal(n)
    return Simulated(y, labels, X)
