"""Run configuration: TOML sections with strict keys and full defaults.

An empty file is a valid configuration; every key has a default.  Unknown
keys are rejected by name so typos fail loudly rather than silently
running with defaults.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import tomli

from .datagen import DataConfig
from .graphpre import GrlConfig
from .model import ModelConfig
from .pareto import TrainSettings


class ConfigError(ValueError):
    pass


_DEFAULTS = {
    "seed": 1,
    "output_dir": "out",
    "data": {
        "n_users": 1200, "n_games": 40, "n_domains": 3,
        "horizon_days": 60, "behavior_len": 20,
        "click_rate": 0.5, "register_rate": 0.12, "purchase_rate": 0.3,
        "split": [0.7, 0.15, 0.15], "export_oracle": False,
    },
    "grl": {
        "d_emb": 8, "hidden": 16, "xi_e": 2.0, "xi_a": 2.0, "zeta": 0.5,
        "mask_rate_attr": 0.3, "mask_rate_edge": 0.3,
        "epochs": 200, "lr": 0.05,
    },
    "model": {
        "d": 8, "gate_hidden": 8, "tower_hidden": [32, 16],
        "tau": 0.05, "rho": 1e-4, "pn_momentum": 0.9, "pn_eps": 1e-5,
        "freeze_grl": False, "use_grl": True,
    },
    "pareto": {
        "steps": 200, "batch_size": 128, "eta": 0.05, "epsilon": 1e-2,
        "loss_kind": "ziln_nll", "epo_convention": False,
        "use_pareto": True, "n_runs": 4,
    },
    "eval": {
        "chunk": 512,
        "drop_ratios": [0.0, 0.5, 0.7, 0.9],
        "corr_runs": 5,
    },
}


@dataclass
class RunConfig:
    resolved: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.resolved["seed"]

    @property
    def output_dir(self):
        return self.resolved["output_dir"]

    def data_config(self):
        d = self.resolved["data"]
        return DataConfig(n_users=d["n_users"], n_games=d["n_games"],
                          n_domains=d["n_domains"],
                          horizon_days=d["horizon_days"],
                          behavior_len=d["behavior_len"],
                          click_rate=d["click_rate"],
                          register_rate=d["register_rate"],
                          purchase_rate=d["purchase_rate"],
                          export_oracle=d["export_oracle"])

    def split_ratios(self):
        return tuple(self.resolved["data"]["split"])

    def grl_config(self):
        g = self.resolved["grl"]
        return GrlConfig(d_emb=g["d_emb"], hidden=g["hidden"],
                         xi_e=g["xi_e"], xi_a=g["xi_a"], zeta=g["zeta"],
                         mask_rate_attr=g["mask_rate_attr"],
                         mask_rate_edge=g["mask_rate_edge"],
                         epochs=g["epochs"], lr=g["lr"])

    def model_config(self):
        m = self.resolved["model"]
        return ModelConfig(gate_hidden=m["gate_hidden"],
                           tower_hidden=tuple(m["tower_hidden"]),
                           behavior_len=self.resolved["data"]["behavior_len"],
                           tau=m["tau"], rho=m["rho"],
                           pn_momentum=m["pn_momentum"], pn_eps=m["pn_eps"],
                           freeze_grl=m["freeze_grl"])

    def train_settings(self):
        p = self.resolved["pareto"]
        return TrainSettings(steps=p["steps"], batch_size=p["batch_size"],
                             eta=p["eta"], eps=p["epsilon"],
                             loss_kind=p["loss_kind"],
                             epo_convention=p["epo_convention"],
                             use_pareto=p["use_pareto"])


def _merge(defaults, given, prefix=""):
    out = {}
    for key, default in defaults.items():
        if isinstance(default, dict):
            sub = given.get(key, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"section [{key}] must be a table")
            out[key] = _merge(default, sub, prefix=f"{key}.")
        else:
            value = given.get(key, default)
            out[key] = _coerce(f"{prefix}{key}", value, default)
    for key in given:
        if key not in defaults:
            raise ConfigError(f"unknown key '{prefix}{key}'")
    return out


def _coerce(name, value, default):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"key '{name}' must be a boolean")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"key '{name}' must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"key '{name}' must be a number")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"key '{name}' must be a string")
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"key '{name}' must be a list")
        return [_coerce(f"{name}[]", v, default[0]) for v in value]
    raise ConfigError(f"unsupported default type for '{name}'")


def _validate(cfg):
    def require(cond, msg):
        if not cond:
            raise ConfigError(msg)

    require(cfg["seed"] >= 0, "seed must be non-negative")
    d = cfg["data"]
    require(d["n_users"] > 0 and d["n_games"] > 0 and d["n_domains"] > 0,
            "data sizes must be positive")
    for key in ("click_rate", "register_rate", "purchase_rate"):
        require(0 < d[key] <= 1, f"data.{key} must lie in (0, 1]")
    require(len(d["split"]) == 3 and abs(sum(d["split"]) - 1.0) < 1e-9
            and all(r > 0 for r in d["split"]),
            "data.split must be 3 positive ratios summing to 1")
    g = cfg["grl"]
    require(g["epochs"] >= 1 and g["lr"] > 0, "grl.epochs/lr must be positive")
    require(0 <= g["mask_rate_attr"] < 1 and 0 <= g["mask_rate_edge"] < 1,
            "grl mask rates must lie in [0, 1)")
    m = cfg["model"]
    require(0 <= m["tau"] < 1, "model.tau must lie in [0, 1)")
    require(m["rho"] >= 0, "model.rho must be non-negative")
    require(all(h > 0 for h in m["tower_hidden"]) and m["tower_hidden"],
            "model.tower_hidden must be positive sizes")
    if m["use_grl"]:
        require(m["d"] == g["d_emb"],
                "model.d must equal grl.d_emb when use_grl is set")
    p = cfg["pareto"]
    require(p["epsilon"] > 0, "pareto.epsilon must be > 0")
    require(p["eta"] > 0, "pareto.eta must be > 0")
    require(p["steps"] >= 1 and p["batch_size"] >= 1 and p["n_runs"] >= 1,
            "pareto.steps/batch_size/n_runs must be >= 1")
    require(p["loss_kind"] in ("ziln_nll", "squared_error"),
            "pareto.loss_kind must be ziln_nll or squared_error")
    e = cfg["eval"]
    require(e["chunk"] >= 1, "eval.chunk must be >= 1")
    require(all(0 <= r < 1 for r in e["drop_ratios"]),
            "eval.drop_ratios must lie in [0, 1)")
    require(e["corr_runs"] >= 2, "eval.corr_runs must be >= 2")


def parse_config(path=None, overrides=None):
    """Load, merge with defaults, validate.  ``overrides`` is a flat dict
    of top-level keys (seed, output_dir) applied after parsing."""
    raw = {}
    if path is not None:
        try:
            with open(path, "rb") as fh:
                raw = tomli.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error in {path}: {exc}")
    resolved = _merge(_DEFAULTS, raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            resolved[key] = _coerce(key, value, _DEFAULTS[key])
    _validate(resolved)
    return RunConfig(resolved)


def config_hash(cfg):
    """Short digest of the behavior-relevant configuration.

    The output directory is excluded: writing the same run somewhere else
    must not change any produced bytes.
    """
    trimmed = {k: v for k, v in cfg.resolved.items() if k != "output_dir"}
    blob = json.dumps(trimmed, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def _toml_value(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, float)):
        return repr(value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, list):
        return "[" + ", ".join(_toml_value(v) for v in value) + "]"
    raise ConfigError(f"cannot serialize {value!r}")


def write_resolved(cfg, path):
    """Echo the resolved configuration as TOML that re-parses identically."""
    lines = []
    for key, value in cfg.resolved.items():
        if not isinstance(value, dict):
            lines.append(f"{key} = {_toml_value(value)}")
    for section, table in cfg.resolved.items():
        if isinstance(table, dict):
            lines.append("")
            lines.append(f"[{section}]")
            for key, value in table.items():
                lines.append(f"{key} = {_toml_value(value)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
