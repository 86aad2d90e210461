"""
Selecting the top-k items privately
===================================

Build a histogram of vote counts, draw a private top-k sequence and see how
far it is from the true top-k.
"""

import numpy as np

from dptopk import FastJointSampler, MechanismParams, RandomSource, fastjoint_select
from dptopk.bench import l1_error, linf_error
from dptopk.histogram import build_histogram, top_scores

# %%
# A slowly decaying count vector over 5000 items, so the top scores are close.
gen = np.random.default_rng(0)
ranks = np.arange(1, 5001)
counts = (2000 / ranks ** 0.5).astype(np.int64) + gen.integers(0, 5, ranks.size)
h = build_histogram(gen.permutation(counts))

# %%
# One draw with k = 10 and epsilon = 1.
params = MechanismParams(epsilon=1.0, beta=2.0 ** -10, k=10)
s = fastjoint_select(h, params, RandomSource(42))
t = top_scores(h, 10)
print("selected items :", s)
print("their counts   :", h.scores[list(s)].tolist())
print("true top counts:", t.tolist())
print("linf / l1 error:", linf_error(t, h, s), l1_error(t, h, s))

# %%
# The sampler keeps its index, so repeated draws only pay for sampling.
sampler = FastJointSampler(h, 10, 1.0)
print("tau =", sampler.tau, "groups =", sampler.index.log_sizes.size)
errors = [linf_error(t, h, x) for x in sampler.sample_many(500, RandomSource(1))]
print("linf error quartiles:", np.percentile(errors, [25, 50, 75]).tolist())

# %%
# Smaller epsilon means more noise.
for eps in (0.1, 0.2, 0.5, 2.0):
  fs = FastJointSampler(h, 10, eps)
  errs = [linf_error(t, h, x) for x in fs.sample_many(200, RandomSource(2))]
  print(f"eps={eps:<4} median linf error {np.median(errs):.0f}")
