"""Synthetic funnel generator tests: stage chain, label monotonicity,
splits, serialization."""

import json

import numpy as np
import pytest

from paretoltv import datagen

SMALL = datagen.DataConfig(n_users=150, n_games=12, horizon_days=40)


@pytest.fixture(scope="module")
def small_dataset():
    return datagen.generate_dataset(SMALL, seed=7)


def test_funnel_stage_chain(small_dataset):
    _, _, funnel, _ = small_dataset
    assert np.all(funnel.clicked <= funnel.exposed)
    assert np.all(funnel.registered <= funnel.clicked)
    assert np.all(funnel.purchased <= funnel.registered)
    n_trials = SMALL.n_users * SMALL.n_games * SMALL.n_domains
    assert funnel.exposed.sum() == n_trials


def test_labels_monotone_and_nonnegative(small_dataset):
    _, _, _, samples = small_dataset
    assert len(samples) > 0
    for s in samples:
        assert 0.0 <= s.y3 <= s.y7 <= s.y30
    buyers = [s for s in samples if s.y30 > 0]
    assert 0 < len(buyers) < len(samples)
    for s in buyers:
        assert s.y3 > 0  # buyers spend every day


def test_events_match_purchase_trials(small_dataset):
    _, _, funnel, _ = small_dataset
    assert len(funnel.events) == int(funnel.purchased.sum())
    for ev in funnel.events:
        assert ev.spend > 0
        assert 0 <= ev.day_index < SMALL.horizon_days


def test_behavior_sequences_precede_registration(small_dataset):
    users, games, funnel, samples = small_dataset
    reg_u, reg_g, reg_d, reg_day = funnel.registrations
    day_of = {}
    for u, day in zip(reg_u, reg_day):
        day_of.setdefault(int(u), []).append(int(day))
    event_days = {}
    for ev in funnel.events:
        event_days[(ev.user_id, ev.game_id)] = event_days.get(
            (ev.user_id, ev.game_id), []) + [ev.day_index]
    for s, day in zip(samples, reg_day):
        ranks = [r for _, r in s.behavior]
        assert ranks == list(range(1, len(ranks) + 1))
        assert len(s.behavior) <= SMALL.behavior_len
        for g, _ in s.behavior:
            assert any(d < day for d in event_days.get((s.user_id, g), []))


def test_determinism(small_dataset):
    again = datagen.generate_dataset(SMALL, seed=7)
    for a, b in zip(small_dataset[3], again[3]):
        assert a == b
    other = datagen.generate_dataset(SMALL, seed=8)
    assert [s.y30 for s in other[3]] != [s.y30 for s in small_dataset[3]]


def test_rates_override_binomial():
    # paper-scale stage rates: joint purchase probability 5e-5, so 200k
    # trials should yield about 10 purchasers
    cfg = datagen.DataConfig(n_users=2000, n_games=100, n_domains=1,
                             domain_rate_mult=(1.0,),
                             domain_buy_offset=(0.0,),
                             domain_spend_scale=(1.0,))
    users, games = datagen.generate_catalog(cfg, seed=11)
    funnel = datagen.simulate_funnel(users, games, cfg, seed=11,
                                     rates=(0.02, 0.25, 0.01))
    n = cfg.n_users * cfg.n_games
    assert n == 200_000
    expected = n * 0.02 * 0.25 * 0.01
    sigma = np.sqrt(n * 5e-5 * (1 - 5e-5))
    count = int(funnel.purchased.sum())
    assert abs(count - expected) <= 4 * sigma


def test_rate_validation():
    users, games = datagen.generate_catalog(SMALL, seed=0)
    with pytest.raises(ValueError):
        datagen.simulate_funnel(users, games, SMALL, seed=0,
                                rates=(0.0, 0.5, 0.5))
    with pytest.raises(ValueError):
        datagen.simulate_funnel(users, games, SMALL, seed=0,
                                rates=(0.5, 1.5, 0.5))


def test_split_sizes_and_stratification(small_dataset):
    _, _, _, samples = small_dataset
    train, valid, test = datagen.split_dataset(samples, (0.7, 0.15, 0.15),
                                               seed=3)
    n = len(samples)
    assert len(train) + len(valid) + len(test) == n
    assert abs(len(train) - 0.7 * n) <= 1
    # stratification keeps the buyer share comparable across splits
    share = lambda part: np.mean([s.y30 > 0 for s in part])
    overall = share(samples)
    for part in (train, valid, test):
        assert abs(share(part) - overall) < 0.15
    # no sample lost or duplicated
    key = lambda s: (s.user_id, s.game_id, s.domain_id)
    combined = sorted(map(key, train + valid + test))
    assert combined == sorted(map(key, samples))


def test_split_validation(small_dataset):
    _, _, _, samples = small_dataset
    with pytest.raises(ValueError):
        datagen.split_dataset(samples, (0.5, 0.5, 0.1), seed=0)
    with pytest.raises(ValueError):
        datagen.split_dataset(samples[:2], (0.998, 0.001, 0.001), seed=0)


def test_split_deterministic(small_dataset):
    _, _, _, samples = small_dataset
    a = datagen.split_dataset(samples, (0.7, 0.15, 0.15), seed=3)
    b = datagen.split_dataset(samples, (0.7, 0.15, 0.15), seed=3)
    assert a == b


def test_jsonl_roundtrip(tmp_path, small_dataset):
    users, games, funnel, samples = small_dataset
    datagen.write_dataset(tmp_path, users, games, funnel.events, samples,
                          meta={"seed": 7})
    u2, g2, e2, s2, meta = datagen.read_dataset(tmp_path)
    assert meta["seed"] == 7
    assert [s.y30 for s in s2] == [s.y30 for s in samples]
    assert [u.user_id for u in u2] == [u.user_id for u in users]
    # hidden latents are not exported by default
    assert all(u.latent_value == 0.0 for u in u2)


def test_jsonl_oracle_export(tmp_path, small_dataset):
    users, games, funnel, samples = small_dataset
    datagen.write_dataset(tmp_path, users, games, funnel.events, samples,
                          export_oracle=True)
    u2, _, _, _, _ = datagen.read_dataset(tmp_path)
    assert [u.latent_value for u in u2] == [u.latent_value for u in users]


def test_jsonl_rejects_unknown_field(tmp_path):
    path = tmp_path / "users.jsonl"
    rows = [{"user_id": 0, "age_bucket": 1, "gender": 0, "city_tier": 2,
             "pay_count_bucket": 1, "oops": 9}]
    path.write_text("\n".join(json.dumps(r) for r in rows) + "\n")
    with pytest.raises(ValueError, match="line 1"):
        datagen.read_jsonl(path, "users")


def test_jsonl_rejects_missing_field(tmp_path):
    path = tmp_path / "games.jsonl"
    path.write_text(json.dumps({"game_id": 0, "category": 1}) + "\n")
    with pytest.raises(ValueError, match="missing"):
        datagen.read_jsonl(path, "games")


def test_jsonl_rejects_malformed_line(tmp_path):
    path = tmp_path / "events.jsonl"
    path.write_text("{not json\n")
    with pytest.raises(ValueError, match="malformed line 1"):
        datagen.read_jsonl(path, "events")


def test_config_validation():
    with pytest.raises(ValueError):
        datagen.DataConfig(n_users=0)
    with pytest.raises(ValueError):
        datagen.DataConfig(horizon_days=0)


def test_empty_registrants_error():
    users, games = datagen.generate_catalog(SMALL, seed=1)
    empty = (np.array([], dtype=int),) * 4
    with pytest.raises(ValueError):
        datagen.generate_labels(empty, users, games, SMALL, seed=1)
