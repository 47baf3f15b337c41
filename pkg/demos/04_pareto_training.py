"""Train the three horizon heads with the non-dominating direction.

Runs a short multi-task training loop twice, once combining the task
gradients through the QP and once with the plain averaged gradient, then
compares loss balance and the gradient-conflict report.
"""

import numpy as np

from paretoltv import datagen, model, pareto

config = datagen.DataConfig(n_users=300, n_games=12, horizon_days=40)
users, games, _, samples = datagen.generate_dataset(config, seed=2)

schema = model.FieldSchema.default(config.n_users, config.n_games,
                                   config.n_domains, d=4)
cfg = model.ModelConfig(gate_hidden=4, tower_hidden=(12, 8),
                        behavior_len=config.behavior_len)
weight = pareto.sample_weight_vector(np.random.default_rng(0))
print(f"importance vector lambda = {np.round(weight.lam, 3)}")

for label, use_pareto in (("pareto", True), ("plain", False)):
    params = model.init_model_params(schema, cfg, seed=2)
    state = model.PnState.fresh(config.n_domains, schema.c * schema.d)
    settings = pareto.TrainSettings(steps=60, batch_size=48, eta=0.08,
                                    use_pareto=use_pareto)
    rows = pareto.train_model(samples, users, games, params, schema, cfg,
                              state, weight, settings, seed=2,
                              run_label=label)
    last = rows[-1]
    losses = np.array([last["l3"], last["l7"], last["l30"]])
    report = pareto.conflict_report(rows)
    print(f"\n[{label}] final losses {np.round(losses, 3)} "
          f"(spread {losses.max() - losses.min():.3f})")
    print(f"[{label}] conflicting-gradient steps: "
          f"{report['conflict_fraction']:.2f} of {report['steps']}")
    if use_pareto:
        modes = [r["mode"] for r in rows]
        print(f"[{label}] balance steps: {modes.count('balance')}, "
              f"descent steps: {modes.count('descent')}")
        betas = np.array([[r["beta1"], r["beta2"], r["beta3"]]
                          for r in rows])
        print(f"[{label}] mean QP weights beta = {np.round(betas.mean(0), 3)}")
