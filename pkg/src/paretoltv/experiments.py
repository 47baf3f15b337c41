"""Ablation experiments: label-drop robustness and seed stability.

Both drivers retrain small models from scratch many times, so they are
meant for the desk-scale synthetic datasets produced by ``datagen``.
"""

from __future__ import annotations

import csv

import numpy as np

from . import metrics as metrics_mod
from . import model as model_mod
from . import pareto as pareto_mod
from .rng import stream

HORIZONS = (3, 7, 30)
UNIFORM_WEIGHT = pareto_mod.WeightVector(np.ones(3) / np.sqrt(3.0))


def _fresh_run(dataset, schema, cfg, settings, seed, run_label,
               grl_emb=None, eval_split="test"):
    """Train from a fresh seeded initialization and evaluate one split."""
    user_emb, game_emb = grl_emb if grl_emb is not None else (None, None)
    params = model_mod.init_model_params(schema, cfg, seed,
                                         user_emb=user_emb, game_emb=game_emb)
    state = model_mod.PnState.fresh(schema.cardinality("domain"),
                                    schema.c * schema.d)
    pareto_mod.train_model(dataset["train"], dataset["users"],
                           dataset["games"], params, schema, cfg, state,
                           UNIFORM_WEIGHT, settings, seed, run_label=run_label)
    y, ev, pb = model_mod.predict_samples(dataset[eval_split],
                                          dataset["users"], dataset["games"],
                                          params, schema, cfg, state)
    return metrics_mod.evaluate_horizons(y, ev, pb)


def label_drop_experiment(dataset, schema, cfg, settings, drop_ratios, seed,
                          grl_emb, path=None):
    """Retrain after dropping a seeded fraction of the training labels.

    The dropped index set depends only on (seed, ratio), so the pretrained
    and from-scratch variants always lose exactly the same samples.
    Returns rows (ratio, variant, horizon, n_gini).
    """
    if any(not (0 <= r < 1) for r in drop_ratios):
        raise ValueError("drop ratios must lie in [0, 1)")
    n = len(dataset["train"])
    rows = []
    for ratio in drop_ratios:
        rng = stream(seed, f"label_drop/{ratio}")
        drop = set(rng.choice(n, size=int(round(ratio * n)),
                              replace=False).tolist())
        kept = [s for i, s in enumerate(dataset["train"]) if i not in drop]
        reduced = dict(dataset, train=kept)
        for variant, emb in (("full", grl_emb), ("wo_grl", None)):
            per_h = _fresh_run(reduced, schema, cfg, settings, seed,
                               run_label=f"drop{ratio}/{variant}",
                               grl_emb=emb)
            for t in HORIZONS:
                rows.append({"ratio": ratio, "variant": variant,
                             "horizon": t, "n_gini": per_h[t]["n_gini"]})
    if path is not None:
        _write_rows(path, ["ratio", "variant", "horizon", "n_gini"], rows)
    return rows


def seed_correlation_experiment(dataset, schema, cfg, settings, n_runs, seed,
                                grl_emb=None, path=None):
    """Correlation of test-AUC vectors across retrains.

    Each variant (multi-task combination on vs plain averaged gradient) is
    retrained ``n_runs`` times with distinct derived seeds; every run
    yields the 3-vector of per-horizon test AUCs.  Output is the full
    (2 n_runs)^2 Pearson matrix over those vectors.
    """
    if n_runs < 2:
        raise ValueError("need at least two runs per variant")
    labels = []
    vectors = []
    for variant, use_pareto in (("pareto", True), ("plain", False)):
        run_settings = pareto_mod.TrainSettings(
            steps=settings.steps, batch_size=settings.batch_size,
            eta=settings.eta, eps=settings.eps, loss_kind=settings.loss_kind,
            epo_convention=settings.epo_convention, use_pareto=use_pareto)
        for r in range(n_runs):
            run_seed = int(stream(seed, f"seed_corr/{variant}/{r}")
                           .integers(0, 2 ** 31))
            per_h = _fresh_run(dataset, schema, cfg, run_settings, run_seed,
                               run_label=f"corr/{variant}/{r}",
                               grl_emb=grl_emb)
            labels.append(f"{variant}_{r}")
            vectors.append([per_h[t]["auc"] for t in HORIZONS])
    vectors = np.asarray(vectors)
    n = len(vectors)
    corr = np.zeros((n, n))
    flagged = []
    stds = vectors.std(axis=1)
    for i in range(n):
        for j in range(n):
            if stds[i] == 0 or stds[j] == 0:
                corr[i, j] = 1.0 if i == j else 0.0
                if i <= j:
                    flagged.append((labels[i], labels[j]))
            else:
                corr[i, j] = float(np.corrcoef(vectors[i], vectors[j])[0, 1])
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["run"] + labels)
            for label, row in zip(labels, corr):
                writer.writerow([label] + [repr(v) for v in row])
    return {"labels": labels, "matrix": corr, "vectors": vectors,
            "zero_variance_pairs": flagged}


def intra_variant_mean_corr(result, variant):
    """Mean off-diagonal correlation among one variant's runs."""
    idx = [i for i, lab in enumerate(result["labels"])
           if lab.startswith(variant + "_")]
    vals = [result["matrix"][i, j] for i in idx for j in idx if i != j]
    return float(np.mean(vals))


def degradation_table(rows):
    """Per (variant, ratio) mean N-GINI drop relative to ratio 0."""
    by = {}
    for row in rows:
        by.setdefault((row["variant"], row["ratio"]), []).append(row["n_gini"])
    means = {k: float(np.mean(v)) for k, v in by.items()}
    out = {}
    for (variant, ratio), mean in means.items():
        base = means.get((variant, 0.0))
        if base is None:
            raise ValueError("ratio 0 baseline missing")
        out[(variant, ratio)] = base - mean
    return out


def _write_rows(path, columns, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
