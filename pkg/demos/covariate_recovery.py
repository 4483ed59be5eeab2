"""Mixture of experts recovery on simulated data with two covariates."""

import numpy as np
from sklearn.metrics import adjusted_rand_score

from dppmix import analysis
from dppmix.datasets import simulate_covariate_mixture
from dppmix.model import CovHyperparams, Hyperparams
from dppmix.sampler import McmcSchedule
from dppmix.sampler_cov import run_chain_cov


def main(seed=0):
    sim = simulate_covariate_mixture(seed)
    hyper = CovHyperparams(base=Hyperparams(a0=3.0, b0=3.0))
    trace = run_chain_cov(sim.y, sim.X, hyper, McmcSchedule(2000, 5, 1000, seed=seed))
    ks = analysis.k_summary(trace)
    part = analysis.binder_partition(trace)
    print("posterior of K:", dict(zip(ks.values.tolist(), np.round(ks.pmf, 3).tolist())))
    print(f"ARI of the Binder partition: {adjusted_rand_score(sim.labels, part.labels):.3f}")
    last = trace.states[-1]
    order = np.argsort(last.mu)
    print("intercepts:", np.round(last.mu[order], 2).tolist())
    print("slopes:", np.round(last.gamma[order], 2).tolist())
    # gating vectors are identified relative to the first component
    print("gating vectors:", np.round(last.beta, 2).tolist())
    print("in-sample MSE:", round(analysis.mse(trace, sim.y, sim.X), 2))


if __name__ == "__main__":
    main()
