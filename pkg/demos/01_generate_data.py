"""Walk through the synthetic funnel dataset.

Generates a small catalog, pushes every (user, game, domain) trial through
the exposure -> click -> register -> purchase funnel and prints how each
stage thins the population, then looks at the label distribution of the
resulting samples.
"""

import numpy as np

from paretoltv import datagen

config = datagen.DataConfig(n_users=400, n_games=15, n_domains=3,
                            horizon_days=45)
users, games, funnel, samples = datagen.generate_dataset(config, seed=7)

n = funnel.exposed.size
print(f"trials:     {n}")
print(f"clicked:    {funnel.clicked.sum()}  ({funnel.clicked.mean():.3f})")
print(f"registered: {funnel.registered.sum()}  ({funnel.registered.mean():.4f})")
print(f"purchased:  {funnel.purchased.sum()}  ({funnel.purchased.mean():.5f})")
print()

y30 = np.array([s.y30 for s in samples])
buyers = y30 > 0
print(f"samples: {len(samples)}, buyers: {buyers.sum()} "
      f"({buyers.mean():.3f} of registrations)")
print(f"y30 among buyers: median {np.median(y30[buyers]):.1f}, "
      f"p90 {np.percentile(y30[buyers], 90):.1f}")

# labels are cumulative, so the horizons are always ordered
y3 = np.array([s.y3 for s in samples])
y7 = np.array([s.y7 for s in samples])
assert np.all((0 <= y3) & (y3 <= y7) & (y7 <= y30))
print("label monotonicity 0 <= y3 <= y7 <= y30 holds for every sample")

with_history = sum(1 for s in samples if s.behavior)
print(f"samples with a purchase history: {with_history}")
