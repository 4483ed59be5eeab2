"""Fit the eight-component simulation and compare with the generating labels.

Runs a single chain (about a minute) and prints the posterior of K, the
size of the Binder partition and its adjusted Rand index.
"""

import numpy as np
from sklearn.metrics import adjusted_rand_score

from dppmix import analysis
from dppmix.datasets import simulate_eight
from dppmix.model import Hyperparams, NuPrior
from dppmix.sampler import McmcSchedule, run_chain


def main(seed=0):
    sim = simulate_eight(seed)
    hyper = Hyperparams(a0=2.0025, b0=0.050125, nu=NuPrior.fixed(1.0))
    trace = run_chain(sim.y, hyper, McmcSchedule(2000, 5, 2000, seed=seed), (-10.0, 10.0))
    ks = analysis.k_summary(trace)
    part = analysis.binder_partition(trace)
    print("posterior of K:", dict(zip(ks.values.tolist(), np.round(ks.pmf, 3).tolist())))
    print(f"mean {ks.mean:.2f}, mode {ks.mode}")
    print(f"Binder partition: {part.n_groups} groups, ARI {adjusted_rand_score(sim.labels, part.labels):.3f}")
    # small extra components usually duplicate a true cluster
    last = trace.states[-1]
    order = np.argsort(last.mu)
    print("last state locations:", np.round(last.mu[order], 2).tolist())
    print("last state weights:  ", np.round(last.w[order], 3).tolist())


if __name__ == "__main__":
    main()
