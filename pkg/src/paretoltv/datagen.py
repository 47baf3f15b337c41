"""Synthetic mini-game advertising dataset.

Users meet games through a conversion funnel (exposure -> click ->
register -> purchase).  Registrations become labeled samples whose 3/7/30
day cumulative spend labels come from a zero-inflated lognormal process;
purchase events feed both behavior sequences and the payment graphs used
for embedding pretraining.

Hidden per-user and per-game latents drive purchase propensity and spend
scale; they are excluded from exported files unless ``export_oracle`` is
set on the config.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

USER_FIELDS = {"age_bucket": 8, "gender": 3, "city_tier": 5, "pay_count_bucket": 6}
GAME_FIELDS = {"category": 6, "battle_type": 4, "market_type": 5, "theme": 8}


@dataclass
class UserRecord:
    user_id: int
    age_bucket: int
    gender: int
    city_tier: int
    pay_count_bucket: int
    latent_value: float  # hidden

    def features(self):
        return [self.age_bucket, self.gender, self.city_tier, self.pay_count_bucket]


@dataclass
class GameRecord:
    game_id: int
    category: int
    battle_type: int
    market_type: int
    theme: int
    monetization: float  # hidden

    def features(self):
        return [self.category, self.battle_type, self.market_type, self.theme]


@dataclass
class InteractionEvent:
    user_id: int
    game_id: int
    day_index: int
    spend: float


@dataclass
class LtvSample:
    user_id: int
    game_id: int
    domain_id: int
    behavior: list  # [(game_id, recency_rank), ...], most recent first
    y3: float
    y7: float
    y30: float


@dataclass
class DataConfig:
    n_users: int = 1200
    n_games: int = 40
    n_domains: int = 3
    horizon_days: int = 60
    behavior_len: int = 20
    # latent scales
    mu_user: float = 0.0
    sigma_user: float = 0.7
    mu_game: float = 0.0
    sigma_game: float = 0.5
    # funnel stage rates (click, register, purchase) and per-domain multipliers
    click_rate: float = 0.5
    register_rate: float = 0.12
    purchase_rate: float = 0.3
    domain_rate_mult: tuple = (1.0, 0.85, 0.7)
    # label process
    buy_base: float = 0.22
    buy_user_coef: float = 0.9
    buy_game_coef: float = 0.5
    domain_buy_offset: tuple = (0.0, -0.3, 0.25)
    spend_sigma: float = 0.6
    spend_bias: float = 0.0
    domain_spend_scale: tuple = (1.0, 0.7, 1.4)
    export_oracle: bool = False

    def __post_init__(self):
        if min(self.n_users, self.n_games, self.n_domains) <= 0:
            raise ValueError("counts must be positive")
        if self.horizon_days <= 0 or self.behavior_len <= 0:
            raise ValueError("horizon_days and behavior_len must be positive")


@dataclass
class FunnelResult:
    """Per-trial stage outcomes; a trial is one (user, game, domain) triple."""

    user_ids: np.ndarray
    game_ids: np.ndarray
    domain_ids: np.ndarray
    day_index: np.ndarray
    exposed: np.ndarray
    clicked: np.ndarray
    registered: np.ndarray
    purchased: np.ndarray
    events: list = field(default_factory=list)

    @property
    def registrations(self):
        idx = np.flatnonzero(self.registered)
        return (self.user_ids[idx], self.game_ids[idx],
                self.domain_ids[idx], self.day_index[idx])


def _quantile_codes(values, cardinality, noise, rng):
    """Bucketize by rank with additive noise, codes in [0, cardinality)."""
    jittered = np.argsort(np.argsort(values + noise * rng.standard_normal(len(values))))
    return (jittered * cardinality // len(values)).astype(np.int64)


def generate_catalog(config, seed):
    """Deterministic user and game catalogs with hidden value latents."""
    rng_u = stream(seed, "catalog/users")
    rng_g = stream(seed, "catalog/games")

    latent = rng_u.lognormal(config.mu_user, config.sigma_user, config.n_users)
    users = []
    pay_codes = _quantile_codes(np.log(latent), USER_FIELDS["pay_count_bucket"], 0.4, rng_u)
    city_codes = _quantile_codes(np.log(latent), USER_FIELDS["city_tier"], 2.0, rng_u)
    ages = rng_u.integers(0, USER_FIELDS["age_bucket"], config.n_users)
    genders = rng_u.integers(0, USER_FIELDS["gender"], config.n_users)
    for i in range(config.n_users):
        users.append(UserRecord(i, int(ages[i]), int(genders[i]), int(city_codes[i]),
                                int(pay_codes[i]), float(latent[i])))

    monet = rng_g.lognormal(config.mu_game, config.sigma_game, config.n_games)
    cat_codes = _quantile_codes(np.log(monet), GAME_FIELDS["category"], 0.4, rng_g)
    theme_codes = _quantile_codes(np.log(monet), GAME_FIELDS["theme"], 2.0, rng_g)
    battles = rng_g.integers(0, GAME_FIELDS["battle_type"], config.n_games)
    markets = rng_g.integers(0, GAME_FIELDS["market_type"], config.n_games)
    games = []
    for j in range(config.n_games):
        games.append(GameRecord(j, int(cat_codes[j]), int(battles[j]), int(markets[j]),
                                int(theme_codes[j]), float(monet[j])))
    return users, games


def simulate_funnel(users, games, config, seed, rates=None):
    """Bernoulli-thin every (user, game, domain) trial through the funnel.

    ``rates`` overrides the config stage rates as (click, register,
    purchase); per-domain multipliers from the config still apply, clipped
    to (0, 1].
    """
    click, register, purchase = rates if rates is not None else (
        config.click_rate, config.register_rate, config.purchase_rate)
    for name, r in (("click", click), ("register", register), ("purchase", purchase)):
        if not (0.0 < r <= 1.0):
            raise ValueError(f"{name} rate must lie in (0, 1], got {r}")

    rng = stream(seed, "funnel")
    n_u, n_g, n_d = len(users), len(games), config.n_domains
    uid, gid, did = np.meshgrid(np.arange(n_u), np.arange(n_g), np.arange(n_d),
                                indexing="ij")
    uid, gid, did = uid.ravel(), gid.ravel(), did.ravel()
    n = uid.size
    mult = np.clip(np.asarray(config.domain_rate_mult, dtype=np.float64)[did], 0.0, None)

    day = rng.integers(0, config.horizon_days, n)
    exposed = np.ones(n, dtype=bool)
    clicked = exposed & (rng.random(n) < np.minimum(click * mult, 1.0))
    registered = clicked & (rng.random(n) < np.minimum(register * mult, 1.0))
    purchased = registered & (rng.random(n) < np.minimum(purchase * mult, 1.0))

    latent = np.array([u.latent_value for u in users])
    monet = np.array([g.monetization for g in games])
    scale = np.asarray(config.domain_spend_scale, dtype=np.float64)
    idx = np.flatnonzero(purchased)
    loc = np.log(latent[uid[idx]] * monet[gid[idx]] * scale[did[idx]]) + config.spend_bias
    spends = rng.lognormal(loc, config.spend_sigma)
    events = [InteractionEvent(int(uid[i]), int(gid[i]), int(day[i]), float(s))
              for i, s in zip(idx, spends)]
    return FunnelResult(uid, gid, did, day, exposed, clicked, registered, purchased,
                        events)


def _behavior_sequences(reg_users, reg_days, events, max_len):
    """Most recent purchased games (excluding same-day-or-later events)."""
    by_user = {}
    for ev in events:
        by_user.setdefault(ev.user_id, []).append((ev.day_index, ev.game_id))
    for lst in by_user.values():
        lst.sort(key=lambda t: (-t[0], t[1]))
    out = []
    for u, day in zip(reg_users, reg_days):
        hist = [(g, r + 1) for r, (d, g) in
                enumerate([e for e in by_user.get(int(u), []) if e[0] < day][:max_len])]
        out.append(hist)
    return out


def generate_labels(registrants, users, games, config, seed, events=None):
    """Turn registrations into LtvSamples with monotone 3/7/30-day labels.

    ``registrants`` is the tuple (user_ids, game_ids, domain_ids, days).
    Non-buyers get all-zero labels; buyers accumulate 30 i.i.d. daily
    lognormal spends, summed at days 3, 7 and 30.
    """
    reg_u, reg_g, reg_d, reg_day = (np.asarray(a) for a in registrants)
    n = reg_u.size
    if n == 0:
        raise ValueError("registrant set is empty")
    rng = stream(seed, "labels")

    latent = np.array([u.latent_value for u in users])[reg_u]
    monet = np.array([g.monetization for g in games])[reg_g]
    offs = np.asarray(config.domain_buy_offset, dtype=np.float64)[reg_d]
    base_logit = np.log(config.buy_base / (1.0 - config.buy_base))
    logit = (base_logit + config.buy_user_coef * np.log(latent)
             + config.buy_game_coef * np.log(monet) + offs)
    p_buy = 1.0 / (1.0 + np.exp(-logit))
    buyer = rng.random(n) < p_buy

    y3 = np.zeros(n)
    y7 = np.zeros(n)
    y30 = np.zeros(n)
    bidx = np.flatnonzero(buyer)
    if bidx.size:
        scale = np.asarray(config.domain_spend_scale, dtype=np.float64)[reg_d[bidx]]
        loc = np.log(latent[bidx] * monet[bidx] * scale) + config.spend_bias
        daily = rng.lognormal(loc[:, None], config.spend_sigma, (bidx.size, 30))
        csum = daily.cumsum(axis=1)
        y3[bidx] = csum[:, 2]
        y7[bidx] = csum[:, 6]
        y30[bidx] = csum[:, 29]

    behavior = (_behavior_sequences(reg_u, reg_day, events, config.behavior_len)
                if events is not None else [[] for _ in range(n)])
    return [LtvSample(int(reg_u[i]), int(reg_g[i]), int(reg_d[i]), behavior[i],
                      float(y3[i]), float(y7[i]), float(y30[i])) for i in range(n)]


def _cumulative_sizes(n, ratios):
    cum = np.rint(np.cumsum(ratios) * n).astype(int)
    return np.diff(np.concatenate([[0], cum]))


def split_dataset(samples, ratios, seed):
    """Deterministic stratified (on purchase indicator) train/valid/test split."""
    ratios = np.asarray(ratios, dtype=np.float64)
    if np.any(ratios < 0) or abs(ratios.sum() - 1.0) > 1e-9:
        raise ValueError("ratios must be non-negative and sum to 1")
    n = len(samples)
    target = _cumulative_sizes(n, ratios)
    if np.any(target <= 0):
        raise ValueError(f"split would be empty: sizes {target.tolist()}")

    rng = stream(seed, "split")
    zero_idx = [i for i, s in enumerate(samples) if s.y30 == 0.0]
    pos_idx = [i for i, s in enumerate(samples) if s.y30 > 0.0]
    splits = [[], [], []]
    deficits = target.astype(float).copy()
    for stratum in (zero_idx, pos_idx):
        if not stratum:
            continue
        order = rng.permutation(len(stratum))
        ideal = ratios * len(stratum)
        sizes = np.floor(ideal).astype(int)
        rem = len(stratum) - sizes.sum()
        # hand leftovers to the splits that are furthest behind their target
        frac = deficits - sizes
        for j in np.argsort(-frac)[:rem]:
            sizes[j] += 1
        deficits -= sizes
        off = 0
        for j in range(3):
            for k in order[off:off + sizes[j]]:
                splits[j].append(stratum[k])
            off += sizes[j]
    # rebalance any residual rounding drift between splits
    counts = np.array([len(s) for s in splits])
    while np.any(counts != target):
        src = int(np.argmax(counts - target))
        dst = int(np.argmin(counts - target))
        splits[dst].append(splits[src].pop())
        counts = np.array([len(s) for s in splits])
    return tuple([samples[i] for i in sorted(part)] for part in splits)


# ---------------------------------------------------------------------------
# on-disk formats (UTF-8 JSON Lines, one keyed record per line)

_RECORD_FIELDS = {
    "users": ["user_id", "age_bucket", "gender", "city_tier", "pay_count_bucket"],
    "games": ["game_id", "category", "battle_type", "market_type", "theme"],
    "events": ["user_id", "game_id", "day_index", "spend"],
    "samples": ["user_id", "game_id", "domain_id", "behavior", "y3", "y7", "y30"],
}


def _meta_line(kind, meta):
    payload = {"_meta": dict(meta or {}, kind=kind)}
    return json.dumps(payload, sort_keys=True)


def write_dataset(outdir, users, games, events, samples, meta=None,
                  export_oracle=False):
    outdir.mkdir(parents=True, exist_ok=True)
    extra_u = {"latent_value"} if export_oracle else set()
    extra_g = {"monetization"} if export_oracle else set()
    _write(outdir / "users.jsonl", "users", users, meta, extra_u)
    _write(outdir / "games.jsonl", "games", games, meta, extra_g)
    _write(outdir / "events.jsonl", "events", events, meta, set())
    _write(outdir / "samples.jsonl", "samples", samples, meta, set())


def _write(path, kind, records, meta, extra_fields):
    fields = _RECORD_FIELDS[kind] + sorted(extra_fields)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_meta_line(kind, meta) + "\n")
        for rec in records:
            fh.write(json.dumps({f: getattr(rec, f) for f in fields},
                                sort_keys=True) + "\n")


_FACTORIES = {
    "users": lambda row: UserRecord(latent_value=row.pop("latent_value", 0.0), **row),
    "games": lambda row: GameRecord(monetization=row.pop("monetization", 0.0), **row),
    "events": lambda row: InteractionEvent(**row),
    "samples": lambda row: LtvSample(
        **dict(row, behavior=[(int(g), int(r)) for g, r in row["behavior"]])),
}


def read_jsonl(path, kind):
    """Read one keyed-record file; returns (records, meta).

    Field order inside a line is irrelevant; unknown or missing fields and
    malformed lines raise with the offending line number.
    """
    allowed = set(_RECORD_FIELDS[kind])
    if kind == "users":
        allowed.add("latent_value")
    if kind == "games":
        allowed.add("monetization")
    required = set(_RECORD_FIELDS[kind])
    records = []
    meta = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: malformed line {lineno}: {exc}") from None
            if lineno == 1 and "_meta" in row:
                meta = row["_meta"]
                continue
            unknown = set(row) - allowed
            if unknown:
                raise ValueError(f"{path}: unknown field(s) {sorted(unknown)} "
                                 f"on line {lineno}")
            missing = required - set(row)
            if missing:
                raise ValueError(f"{path}: missing field(s) {sorted(missing)} "
                                 f"on line {lineno}")
            records.append(_FACTORIES[kind](row))
    return records, meta


def read_dataset(outdir):
    users, meta = read_jsonl(outdir / "users.jsonl", "users")
    games, _ = read_jsonl(outdir / "games.jsonl", "games")
    events, _ = read_jsonl(outdir / "events.jsonl", "events")
    samples, _ = read_jsonl(outdir / "samples.jsonl", "samples")
    return users, games, events, samples, meta


def generate_dataset(config, seed):
    """Full generation pipeline: catalogs, funnel, labels."""
    users, games = generate_catalog(config, seed)
    funnel = simulate_funnel(users, games, config, seed)
    samples = generate_labels(funnel.registrations, users, games, config, seed,
                              events=funnel.events)
    return users, games, funnel, samples
