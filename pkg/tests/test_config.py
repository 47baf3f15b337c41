"""Configuration parsing: defaults, strict keys, validation, echo."""

import pytest

from paretoltv import config


def write(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_empty_file_gives_defaults(tmp_path):
    cfg = config.parse_config(write(tmp_path, ""))
    assert cfg.seed == 1
    assert cfg.output_dir == "out"
    assert cfg.resolved["data"]["n_users"] == 1200
    assert cfg.resolved["pareto"]["epsilon"] == 1e-2
    # missing path entirely is also fine
    assert config.parse_config().resolved == cfg.resolved


def test_partial_override(tmp_path):
    cfg = config.parse_config(write(tmp_path, """
seed = 7

[data]
n_users = 50

[pareto]
steps = 3
"""))
    assert cfg.seed == 7
    assert cfg.resolved["data"]["n_users"] == 50
    assert cfg.resolved["data"]["n_games"] == 40  # untouched default
    assert cfg.train_settings().steps == 3


def test_unknown_key_rejected_by_name(tmp_path):
    with pytest.raises(config.ConfigError, match="data.n_userz"):
        config.parse_config(write(tmp_path, "[data]\nn_userz = 5\n"))
    with pytest.raises(config.ConfigError, match="'sed'"):
        config.parse_config(write(tmp_path, "sed = 5\n"))
    with pytest.raises(config.ConfigError, match="unknown key"):
        config.parse_config(write(tmp_path, "[nope]\nx = 1\n"))


def test_type_errors(tmp_path):
    with pytest.raises(config.ConfigError, match="integer"):
        config.parse_config(write(tmp_path, "[data]\nn_users = 1.5\n"))
    with pytest.raises(config.ConfigError, match="boolean"):
        config.parse_config(write(tmp_path, "[model]\nfreeze_grl = 1\n"))
    with pytest.raises(config.ConfigError, match="string"):
        config.parse_config(write(tmp_path, "[pareto]\nloss_kind = 3\n"))
    with pytest.raises(config.ConfigError, match="list"):
        config.parse_config(write(tmp_path, "[data]\nsplit = 0.5\n"))


def test_semantic_validation(tmp_path):
    cases = [
        "[pareto]\nepsilon = 0.0\n",
        "[pareto]\neta = -0.1\n",
        "[pareto]\nloss_kind = \"huber\"\n",
        "[data]\nclick_rate = 0.0\n",
        "[data]\nsplit = [0.5, 0.5, 0.5]\n",
        "[model]\ntau = 1.0\n",
        "[eval]\ncorr_runs = 1\n",
        "seed = -1\n",
    ]
    for body in cases:
        with pytest.raises(config.ConfigError):
            config.parse_config(write(tmp_path, body))


def test_grl_dim_coupling(tmp_path):
    with pytest.raises(config.ConfigError, match="d_emb"):
        config.parse_config(write(tmp_path, "[model]\nd = 4\n"))
    # decoupled when pretraining is off
    cfg = config.parse_config(write(tmp_path,
                                    "[model]\nd = 4\nuse_grl = false\n"))
    assert cfg.resolved["model"]["d"] == 4


def test_missing_file_and_bad_toml(tmp_path):
    with pytest.raises(config.ConfigError, match="not found"):
        config.parse_config(tmp_path / "absent.toml")
    with pytest.raises(config.ConfigError, match="parse error"):
        config.parse_config(write(tmp_path, "seed = = 1\n"))


def test_overrides(tmp_path):
    cfg = config.parse_config(write(tmp_path, "seed = 3\n"),
                              overrides={"seed": 9, "output_dir": None})
    assert cfg.seed == 9
    assert cfg.output_dir == "out"


def test_section_object_construction(tmp_path):
    cfg = config.parse_config(write(tmp_path, """
[data]
behavior_len = 7

[model]
tower_hidden = [10, 5]
"""))
    assert cfg.data_config().behavior_len == 7
    assert cfg.model_config().behavior_len == 7  # shared with data section
    assert cfg.model_config().tower_hidden == (10, 5)
    assert cfg.grl_config().d_emb == 8
    assert cfg.split_ratios() == (0.7, 0.15, 0.15)


def test_hash_sensitivity(tmp_path):
    a = config.parse_config(write(tmp_path, "seed = 1\n"))
    b = config.parse_config(write(tmp_path, "seed = 2\n", name="b.toml"))
    c = config.parse_config(write(tmp_path, "", name="c.toml"))
    assert config.config_hash(a) != config.config_hash(b)
    assert config.config_hash(a) == config.config_hash(c)  # 1 is the default
    assert len(config.config_hash(a)) == 16


def test_write_resolved_reparses_identically(tmp_path):
    cfg = config.parse_config(write(tmp_path, """
seed = 5

[pareto]
eta = 0.125

[data]
split = [0.8, 0.1, 0.1]
"""))
    echo = tmp_path / "config.resolved"
    config.write_resolved(cfg, echo)
    again = config.parse_config(echo)
    assert again.resolved == cfg.resolved
    assert config.config_hash(again) == config.config_hash(cfg)
