"""Look inside one forward pass of the value model.

Builds a small model, runs a batch through it and prints what the blocks
produce: domain gate activations, partitioned-norm fallbacks, tower gate
sparsity at inference, and the three ZILN heads turned into predictions.
"""

import numpy as np

from paretoltv import datagen, model

config = datagen.DataConfig(n_users=200, n_games=10, horizon_days=30)
users, games, _, samples = datagen.generate_dataset(config, seed=11)

schema = model.FieldSchema.default(config.n_users, config.n_games,
                                   config.n_domains, d=4)
cfg = model.ModelConfig(gate_hidden=4, tower_hidden=(12, 8),
                        behavior_len=config.behavior_len)
params = model.init_model_params(schema, cfg, seed=11)
state = model.PnState.fresh(config.n_domains, schema.c * schema.d)

batch = model.batch_from_samples(samples[:64], users, games, schema,
                                 cfg.behavior_len)
print(f"batch: {batch.size} samples, "
      f"{int(batch.behavior_mask.sum())} behavior items, "
      f"domains {np.bincount(batch.domain_ids).tolist()}")

out_train = model.forward_full(batch, params, schema, cfg, state, "train")
out_infer = model.forward_full(batch, params, schema, cfg, state, "infer",
                               update_stats=False)
print(f"tower gate activations: mean {out_train.gate_activation.mean():.3f}")
print(f"gates below tau={cfg.tau} (pruned at inference): "
      f"{out_infer.sparsity:.3f}")
print(f"partitioned-norm fallbacks so far: {state.fallbacks}")

preds = model.predictions(out_infer)
for t in (3, 7, 30):
    ev, p_buy = preds[t]
    print(f"h{t}: mean predicted value {ev.mean():.2f}, "
          f"mean purchase prob {p_buy.mean():.3f}")

# checkpoints round-trip through plain JSON
model.save_checkpoint("/tmp/demo_model.json", params, schema, cfg, state)
again = model.load_checkpoint("/tmp/demo_model.json")[0]
assert np.array_equal(params.flat(), again.flat())
print("checkpoint round-trip: identical parameters")
