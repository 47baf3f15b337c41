"""Command line pipeline driver.

Every subcommand reads its inputs from files, writes only new files under
the output directory, and derives all randomness from the single seed in
the run configuration.  Exit codes: 0 success, 2 configuration error,
3 missing prerequisite artifact, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import datagen, experiments, graphpre, metrics, model, pareto
from .config import ConfigError, config_hash, parse_config, write_resolved

SCHEMA_VERSION = model.SCHEMA_VERSION
HORIZONS = (3, 7, 30)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_NUMERIC = 4


class MissingArtifactError(FileNotFoundError):
    pass


def _require(path, hint):
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(
            f"missing prerequisite artifact {path} (run `{hint}` first)")
    return path


def _meta(cfg):
    return {"schema_version": SCHEMA_VERSION, "seed": cfg.seed,
            "config": config_hash(cfg)}


def _write_csv(path, columns, rows, meta):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v
                             for v in row])


def _load_dataset(cfg, out):
    _require(out / "samples.jsonl", "generate-data")
    users, games, events, samples, _ = datagen.read_dataset(out)
    train, valid, test = datagen.split_dataset(samples, cfg.split_ratios(),
                                               cfg.seed)
    return {"users": users, "games": games, "events": events,
            "samples": samples, "train": train, "valid": valid, "test": test}


def _load_embeddings(cfg, out):
    if not cfg.resolved["model"]["use_grl"]:
        return None
    path = _require(out / "embeddings.jsonl", "pretrain-graph")
    return graphpre.read_embeddings(path)


def _schema(cfg):
    d = cfg.resolved["data"]
    return model.FieldSchema.default(d["n_users"], d["n_games"],
                                     d["n_domains"],
                                     cfg.resolved["model"]["d"])


def _init_params(cfg, schema, emb):
    user_emb, game_emb = emb if emb is not None else (None, None)
    ued = None if user_emb is None else {i: v for i, v in user_emb.items()}
    ged = None if game_emb is None else {i: v for i, v in game_emb.items()}
    return model.init_model_params(schema, cfg.model_config(), cfg.seed,
                                   user_emb=ued, game_emb=ged)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate_data(cfg, out, args):
    dataset = datagen.generate_dataset(cfg.data_config(), cfg.seed)
    users, games, funnel, samples = dataset
    datagen.write_dataset(out, users, games, funnel.events, samples,
                          meta=_meta(cfg),
                          export_oracle=cfg.resolved["data"]["export_oracle"])
    print(f"wrote {len(samples)} samples, {len(funnel.events)} events to {out}")


def cmd_pretrain_graph(cfg, out, args):
    data = _load_dataset(cfg, out)
    graphs = graphpre.build_meta_path_graphs(data["events"], data["users"],
                                             data["games"])
    params, trace, _ = graphpre.train_grl(graphs, cfg.grl_config(), cfg.seed)
    graphpre.export_embeddings(params, graphs, out / "embeddings.jsonl",
                               meta=_meta(cfg))
    _write_csv(out / "grl_trace.csv", ["epoch", "loss"],
               list(enumerate(trace)), _meta(cfg))
    print(f"pretraining loss {trace[0]:.4f} -> {trace[-1]:.4f}")


def cmd_train(cfg, out, args):
    data = _load_dataset(cfg, out)
    emb = _load_embeddings(cfg, out)
    schema = _schema(cfg)
    mcfg = cfg.model_config()
    params = _init_params(cfg, schema, emb)
    state = model.PnState.fresh(cfg.resolved["data"]["n_domains"],
                                schema.c * schema.d)
    weight = pareto.WeightVector(np.ones(3) / np.sqrt(3.0))
    rows = pareto.train_model(data["train"], data["users"], data["games"],
                              params, schema, mcfg, state, weight,
                              cfg.train_settings(), cfg.seed)
    model.save_checkpoint(out / "model.json", params, schema, mcfg, state,
                          dict(_meta(cfg), weight=weight.lam.tolist()))
    pareto.write_step_log(rows, out / "step_log.csv", meta=_meta(cfg))
    print(f"trained {len(rows)} steps; final losses "
          f"{rows[-1]['l3']:.4f}/{rows[-1]['l7']:.4f}/{rows[-1]['l30']:.4f}")


def cmd_search(cfg, out, args):
    data = _load_dataset(cfg, out)
    emb = _load_embeddings(cfg, out)
    schema = _schema(cfg)
    mcfg = cfg.model_config()
    init = _init_params(cfg, schema, emb)
    state = model.PnState.fresh(cfg.resolved["data"]["n_domains"],
                                schema.c * schema.d)
    best, results = pareto.optimal_search(
        data, init, schema, mcfg, state, cfg.train_settings(),
        cfg.resolved["pareto"]["n_runs"], cfg.seed, str(out))
    # promote the selected run to the canonical checkpoint
    params, schema_b, cfg_b, state_b, meta_b = model.load_checkpoint(
        best.checkpoint_path)
    model.save_checkpoint(out / "model.json", params, schema_b, cfg_b,
                          state_b, dict(_meta(cfg), **meta_b))
    pareto.write_step_log(best.step_rows, out / "step_log.csv",
                          meta=_meta(cfg))
    print(f"search over {len(results)} runs; best run {best.run_index} "
          f"score {best.score:.4f}")


def cmd_evaluate(cfg, out, args):
    data = _load_dataset(cfg, out)
    _require(out / "model.json", "train")
    params, schema, mcfg, state, _ = model.load_checkpoint(out / "model.json")
    y, ev, pb = model.predict_samples(data["test"], data["users"],
                                      data["games"], params, schema, mcfg,
                                      state, chunk=cfg.resolved["eval"]["chunk"])
    per_h = metrics.evaluate_horizons(y, ev, pb)
    rows = [(t, per_h[t]["nmae"], per_h[t]["auc"], per_h[t]["n_gini"])
            for t in HORIZONS]
    _write_csv(out / "metrics.csv", ["horizon", "nmae", "auc", "n_gini"],
               rows, _meta(cfg))
    for t in HORIZONS:
        print(f"h{t}: nmae={per_h[t]['nmae']:.4f} auc={per_h[t]['auc']:.4f} "
              f"n_gini={per_h[t]['n_gini']:.4f}")


def cmd_label_drop(cfg, out, args):
    data = _load_dataset(cfg, out)
    emb = _load_embeddings(cfg, out)
    if emb is None:
        raise MissingArtifactError(
            "label-drop needs pretrained embeddings (model.use_grl=false "
            "makes the comparison empty); run `pretrain-graph` first")
    schema = _schema(cfg)
    rows = experiments.label_drop_experiment(
        data, schema, cfg.model_config(), cfg.train_settings(),
        cfg.resolved["eval"]["drop_ratios"], cfg.seed, emb)
    _write_csv(out / "label_drop.csv", ["ratio", "variant", "horizon", "n_gini"],
               [(r["ratio"], r["variant"], r["horizon"], r["n_gini"])
                for r in rows], _meta(cfg))
    print(f"label-drop: {len(rows)} rows")


def cmd_seed_correlation(cfg, out, args):
    data = _load_dataset(cfg, out)
    emb = _load_embeddings(cfg, out)
    schema = _schema(cfg)
    res = experiments.seed_correlation_experiment(
        data, schema, cfg.model_config(), cfg.train_settings(),
        cfg.resolved["eval"]["corr_runs"], cfg.seed, grl_emb=emb,
        path=out / "seed_correlation.csv")
    for variant in ("pareto", "plain"):
        print(f"{variant}: mean intra-variant corr "
              f"{experiments.intra_variant_mean_corr(res, variant):.4f}")


def cmd_conflict_report(cfg, out, args):
    path = _require(out / "step_log.csv", "train")
    rows = pareto.read_step_log(path)
    summary = pareto.conflict_report(rows, out / "conflict_report.csv")
    print(f"conflict fraction {summary['conflict_fraction']:.3f} "
          f"over {summary['steps']} steps")


def cmd_stability(cfg, out, args):
    ckpt_a = _require(args.checkpoint_a or out / "model.json", "train")
    ckpt_b = _require(args.checkpoint_b or out / "model.json", "train")
    data = _load_dataset(cfg, out)
    rows = []
    for t in HORIZONS:
        sums = []
        for ckpt in (ckpt_a, ckpt_b):
            params, schema, mcfg, state, _ = model.load_checkpoint(ckpt)
            _, ev, _ = model.predict_samples(data["test"], data["users"],
                                             data["games"], params, schema,
                                             mcfg, state)
            sums.append(ev[t])
        rows.append((t, metrics.stability_diff(sums[0], sums[1])))
    _write_csv(out / "stability.csv", ["horizon", "diff"], rows, _meta(cfg))
    for t, diff in rows:
        print(f"h{t}: diff={diff:.6f}")


COMMANDS = {
    "generate-data": cmd_generate_data,
    "pretrain-graph": cmd_pretrain_graph,
    "train": cmd_train,
    "search": cmd_search,
    "evaluate": cmd_evaluate,
    "label-drop": cmd_label_drop,
    "seed-correlation": cmd_seed_correlation,
    "conflict-report": cmd_conflict_report,
    "stability": cmd_stability,
}


def build_parser():
    parser = argparse.ArgumentParser(
        prog="paretoltv",
        description="Multi-horizon LTV pipeline on synthetic funnel data.")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", default=None, help="TOML run config")
    parser.add_argument("--output", default=None,
                        help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed override")
    parser.add_argument("--workers", type=int, default=1,
                        help="worker pool size for search/experiments")
    parser.add_argument("--checkpoint-a", default=None,
                        help="first checkpoint for `stability`")
    parser.add_argument("--checkpoint-b", default=None,
                        help="second checkpoint for `stability`")
    return parser


def _error_record(out, code, exc):
    record = {"error": type(exc).__name__, "message": str(exc),
              "exit_code": code}
    try:
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            with open(out / "error.json", "w", encoding="utf-8") as fh:
                json.dump(record, fh, sort_keys=True)
    except OSError:
        pass
    print(json.dumps(record, sort_keys=True), file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    out = None
    try:
        if args.workers < 1:
            raise ConfigError("--workers must be >= 1")
        cfg = parse_config(args.config,
                           overrides={"seed": args.seed,
                                      "output_dir": args.output})
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_resolved(cfg, out / "config.resolved")
        COMMANDS[args.subcommand](cfg, out, args)
        return EXIT_OK
    except ConfigError as exc:
        _error_record(out, EXIT_CONFIG, exc)
        return EXIT_CONFIG
    except (MissingArtifactError, FileNotFoundError) as exc:
        _error_record(out, EXIT_MISSING, exc)
        return EXIT_MISSING
    except (ArithmeticError, np.linalg.LinAlgError, RuntimeError) as exc:
        _error_record(out, EXIT_NUMERIC, exc)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
