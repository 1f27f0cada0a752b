"""Sanity-check the sampler on a correlated 2-D Gaussian.

Usage: python3 demos/gaussian_check.py

The replica ensemble runs against an analytic log-density, so the pooled
post-burn-in moments can be compared with the exact ones.
"""
import numpy as np

from sapt_lem.engine import EnsembleConfig, GaussianTarget, run
from sapt_lem.proposals import PriorBounds

MEAN = np.array([1.0, -2.0])
COV = np.array([[1.0, 0.6], [0.6, 2.0]])


def main():
    bounds = PriorBounds(("a", "b"), [-20.0, -20.0], [20.0, 20.0])
    target = GaussianTarget(MEAN, COV, bounds)
    cfg = EnsembleConfig(replicas=2, samples=20000, t_max=1.0, s_prob=0.0,
                         proposal="rw", burn_in=0.1)
    chains = run(target, cfg, seed=0)
    theta = chains.pooled("theta")
    print("samples after burn-in:", len(theta))
    print("mean      ", np.round(theta.mean(axis=0), 3), " exact", MEAN)
    print("covariance\n", np.round(np.cov(theta.T), 3), "\nexact\n", COV)
    print("acceptance per replica:", [round(float(np.mean(r["accepted"])), 3) for r in chains.replicas])


if __name__ == "__main__":
    main()
