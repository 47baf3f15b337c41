"""Desk-scale versions of the two ablation experiments.

Label drop: retrain with a fraction of the training labels removed, with
and without pretrained graph embeddings, and compare ranking degradation.
Seed correlation: retrain each variant a few times and look at how stable
the per-horizon test AUC vector is across retrains.

Both are deliberately small here; the pinned acceptance configurations in
the test suite use larger datasets and more steps.
"""

import numpy as np

from paretoltv import datagen, experiments, graphpre, model, pareto

config = datagen.DataConfig(n_users=250, n_games=12, horizon_days=40)
users, games, funnel, samples = datagen.generate_dataset(config, seed=4)
train, valid, test = datagen.split_dataset(samples, (0.7, 0.15, 0.15),
                                           seed=4)
dataset = {"train": train, "valid": valid, "test": test,
           "users": users, "games": games}

graphs = graphpre.build_meta_path_graphs(funnel.events, users, games)
gparams, _, _ = graphpre.train_grl(
    graphs, graphpre.GrlConfig(d_emb=4, hidden=8, epochs=60), seed=4)
embs = graphpre.node_embeddings(gparams, graphs)
grl_emb = ({i: v for i, v in enumerate(embs["user-game-user"])},
           {i: v for i, v in enumerate(embs["game-user-game"])})

schema = model.FieldSchema.default(config.n_users, config.n_games,
                                   config.n_domains, d=4)
cfg = model.ModelConfig(gate_hidden=4, tower_hidden=(10, 6),
                        behavior_len=config.behavior_len, freeze_grl=True)
settings = pareto.TrainSettings(steps=60, batch_size=48, eta=0.1)

print("label drop (mean N-GINI degradation vs ratio 0):")
rows = experiments.label_drop_experiment(dataset, schema, cfg, settings,
                                         (0.0, 0.5, 0.8), seed=4,
                                         grl_emb=grl_emb)
table = experiments.degradation_table(rows)
for ratio in (0.5, 0.8):
    print(f"  ratio {ratio}: full {table[('full', ratio)]:+.3f}   "
          f"wo_grl {table[('wo_grl', ratio)]:+.3f}")

print("\nseed correlation of test-AUC vectors (3 runs per variant):")
result = experiments.seed_correlation_experiment(dataset, schema, cfg,
                                                 settings, n_runs=3, seed=4,
                                                 grl_emb=grl_emb)
for variant in ("pareto", "plain"):
    corr = experiments.intra_variant_mean_corr(result, variant)
    print(f"  {variant}: mean off-diagonal correlation {corr:+.3f}")
print(f"  AUC vectors:\n{np.round(result['vectors'], 3)}")
