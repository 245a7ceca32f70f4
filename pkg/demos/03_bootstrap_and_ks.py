"""Seeded bootstrap confidence intervals and the two-sample KS test."""

import numpy as np

from rir import bootstrap_ci, ks_two_sample, presence_compare

rng = np.random.default_rng(7)

# percentile bootstrap of a category-sized 0/1 outcome vector
outcomes = (rng.random(150) < 0.3933).astype(float)
interval = bootstrap_ci(list(outcomes), iterations=1000, level=0.95, seed=7)
print(f"observed mean {100 * outcomes.mean():.2f}% -> "
      f"95% CI ({interval.lo:.2f}, {interval.hi:.2f})")
print("same seed reproduces the interval:",
      bootstrap_ci(list(outcomes), iterations=1000, level=0.95, seed=7) == interval)

# KS on identical, shifted, and disjoint samples
x = list(rng.normal(size=400))
print("\nKS(x, x):           ", ks_two_sample(x, x))
print("KS(x, x + 0.3 shift):", ks_two_sample(x, list(np.asarray(x) + 0.3)))
print("KS disjoint supports:", ks_two_sample([1, 2, 3], [10, 11, 12]))

# web-presence comparison: helping-set entities are rarer on the web
helping_counts = list(10 ** rng.normal(4.0, 0.8, size=200))
hurting_counts = list(10 ** rng.normal(5.2, 0.8, size=120))
result = presence_compare(helping_counts, hurting_counts)
print(f"\npresence comparison (log10-transformed counts): "
      f"D={result.d:.3f}, p={result.p_value:.2e}")
