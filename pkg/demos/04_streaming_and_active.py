"""
Online learning and active learning
===================================

A random-feature classifier absorbs a data stream one block at a time with
exact conjugate updates.  The same model then drives pool-based active
learning, picking the pool point with the highest predictive entropy.
"""

import numpy as np

from glik.bayes_linear import FeatureMap
from glik.data import gaussian_classes, separable_binary
from glik.evalharness import StreamConfig, active_learning_run, steps_to_reach, streaming_run

ds = gaussian_classes(3000, K=10, dim=20, separation=0.5, rng_seed=0)
stream, test = ds.split(2500, rng_seed=0)
fmap = FeatureMap.random_relu(ds.D, 256, seed=0)
cfg = StreamConfig(cadence=500, n_samples=256)

print("points seen: " + " ".join(f"{n:>7d}" for n in range(500, 2501, 500)))
for method in ("gauss", "laplace", "variational", "moment-ori", "adf"):
    records = streaming_run(stream, test, method, fmap, cfg, rng_seed=0)
    print(f"{method:11s}  " + " ".join(f"{r.test_accuracy:7.3f}" for r in records) + f"   final loglik {records[-1].test_loglik:.3f}")

# seeded pool and test split; two random starting points
steps = {"entropy": [], "random": []}
for seed in range(5):
    pool, test = separable_binary(1500, rng_seed=seed).split(1000, rng_seed=seed)
    for acq in steps:
        records = active_learning_run(pool, test, 2, 30, "variational", seed, acq, n_samples=256)
        reached = steps_to_reach(records, 0.95)
        steps[acq].append(31 if reached is None else reached)
print("\nsteps to 95% test accuracy (mean over 5 seeds):", {k: float(np.mean(v)) for k, v in steps.items()})
