"""Multi-horizon value prediction backbone.

Composition per sample: field embeddings feed (a) pairwise field-weighted
interaction scores and (b) a domain-gated copy of the embeddings, which is
partition-normalized per domain; a target-attention encoding of the
behavior sequence is appended and a domain-sparsified tower produces three
ZILN heads, one per 3/7/30-day horizon.

All blocks are built from the autodiff primitives, so the finite
difference harness covers the full model end to end.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import ziln
from .datagen import GAME_FIELDS, USER_FIELDS
from .rng import stream

SCHEMA_VERSION = 1
HORIZONS = (3, 7, 30)


@dataclass
class FieldSchema:
    """Ordered embedded fields; one field is the domain selector."""

    fields: list  # [(name, cardinality), ...]
    d: int
    domain_field: str = "domain"

    def __post_init__(self):
        names = [n for n, _ in self.fields]
        if self.domain_field not in names:
            raise ValueError("schema must include the domain field")
        if any(card <= 0 for _, card in self.fields):
            raise ValueError("cardinalities must be positive")

    @property
    def c(self):
        return len(self.fields)

    def cardinality(self, name):
        return dict(self.fields)[name]

    @classmethod
    def default(cls, n_users, n_games, n_domains, d=8):
        fields = [(f, card) for f, card in USER_FIELDS.items()]
        fields += [(f, card) for f, card in GAME_FIELDS.items()]
        # +1 reserves a default row for unseen ids
        fields += [("domain", n_domains), ("user_id", n_users + 1),
                   ("game_id", n_games + 1)]
        return cls(fields, d)


@dataclass
class ModelConfig:
    gate_hidden: int = 8
    tower_hidden: tuple = (32, 16)
    behavior_len: int = 20
    tau: float = 0.05       # inference gate pruning threshold
    rho: float = 1e-4       # gate L1 penalty weight
    pn_momentum: float = 0.9
    pn_eps: float = 1e-5
    freeze_grl: bool = False


@dataclass
class PnState:
    """Per-domain running statistics for partitioned normalization."""

    mean: np.ndarray  # (n_domains, width)
    var: np.ndarray
    fallbacks: int = 0

    @classmethod
    def fresh(cls, n_domains, width):
        return cls(np.zeros((n_domains, width)), np.ones((n_domains, width)))

    def copy(self):
        return PnState(self.mean.copy(), self.var.copy(), self.fallbacks)


@dataclass
class ModelOutput:
    heads: dict  # horizon -> (p_raw, mu, sigma_raw) arrays of shape (B,)
    gate_activation: np.ndarray
    sparsity: float
    unknown_user: np.ndarray
    unknown_game: np.ndarray


@dataclass
class Batch:
    codes: dict  # field name -> (B,) int codes
    behavior_ids: np.ndarray   # (B, L)
    behavior_mask: np.ndarray  # (B, L) 1.0 where a real item sits
    y: dict  # horizon -> (B,)
    unknown_user: np.ndarray
    unknown_game: np.ndarray

    @property
    def size(self):
        return len(self.codes["domain"])

    @property
    def domain_ids(self):
        return self.codes["domain"]


def make_batch(samples, schema, behavior_len):
    n = len(samples)
    u_card = schema.cardinality("user_id")
    g_card = schema.cardinality("game_id")
    codes = {}
    for f in ("age_bucket", "gender", "city_tier", "pay_count_bucket"):
        codes[f] = np.zeros(n, dtype=np.int64)
    for f in ("category", "battle_type", "market_type", "theme"):
        codes[f] = np.zeros(n, dtype=np.int64)
    codes["domain"] = np.array([s.domain_id for s in samples], dtype=np.int64)
    uid = np.array([s.user_id for s in samples], dtype=np.int64)
    gid = np.array([s.game_id for s in samples], dtype=np.int64)
    unknown_user = uid >= u_card - 1
    unknown_game = gid >= g_card - 1
    codes["user_id"] = np.where(unknown_user, u_card - 1, uid)
    codes["game_id"] = np.where(unknown_game, g_card - 1, gid)

    beh = np.zeros((n, behavior_len), dtype=np.int64)
    mask = np.zeros((n, behavior_len))
    for i, s in enumerate(samples):
        for g, rank in s.behavior[:behavior_len]:
            col = rank - 1
            beh[i, col] = min(int(g), g_card - 1)
            mask[i, col] = 1.0
    y = {3: np.array([s.y3 for s in samples]),
         7: np.array([s.y7 for s in samples]),
         30: np.array([s.y30 for s in samples])}
    return Batch(codes, beh, mask, y, unknown_user, unknown_game)


def fill_catalog_codes(batch, samples, users, games):
    user_feats = {u.user_id: u.features() for u in users}
    game_feats = {g.game_id: g.features() for g in games}
    ufields = ("age_bucket", "gender", "city_tier", "pay_count_bucket")
    gfields = ("category", "battle_type", "market_type", "theme")
    for i, s in enumerate(samples):
        uf = user_feats.get(s.user_id)
        gf = game_feats.get(s.game_id)
        if uf is not None:
            for f, v in zip(ufields, uf):
                batch.codes[f][i] = v
        if gf is not None:
            for f, v in zip(gfields, gf):
                batch.codes[f][i] = v
    return batch


def batch_from_samples(samples, users, games, schema, behavior_len):
    return fill_catalog_codes(make_batch(samples, schema, behavior_len),
                              samples, users, games)


# ---------------------------------------------------------------------------
# parameter initialization


def init_model_params(schema, cfg, seed, user_emb=None, game_emb=None):
    """Seeded parameters; id tables may be initialized from pretrained
    embeddings (matching ids row-by-row, default row left random)."""
    rng = stream(seed, "model/init")
    params = ad.ParamStore()
    d = schema.d
    for name, card in schema.fields:
        table = 0.1 * rng.standard_normal((card, d))
        if name == "user_id" and user_emb is not None:
            for i, vec in user_emb.items():
                if i < card - 1:
                    table[i] = vec
        if name == "game_id" and game_emb is not None:
            for i, vec in game_emb.items():
                if i < card - 1:
                    table[i] = vec
        params.add(f"emb/{name}", table)

    n_pairs = schema.c * (schema.c - 1) // 2
    params.add("fwfm/pairs", 0.1 * rng.standard_normal(n_pairs))

    params.add("gate/w1", (1.0 / np.sqrt(d)) * rng.standard_normal((d, cfg.gate_hidden)))
    params.add("gate/b1", np.zeros(cfg.gate_hidden))
    params.add("gate/w2", (1.0 / np.sqrt(cfg.gate_hidden))
               * rng.standard_normal((cfg.gate_hidden, d)))
    params.add("gate/b2", np.zeros(d))

    width = schema.c * d
    n_domains = schema.cardinality("domain")
    params.add("pn/gamma", np.ones(width))
    params.add("pn/beta", np.zeros(width))
    params.add("pn/gamma_k", np.ones((n_domains, width)))
    params.add("pn/beta_k", np.zeros((n_domains, width)))

    params.add("tin/rank_emb", 0.1 * rng.standard_normal((cfg.behavior_len, d)))
    params.add("tin/user_w", (1.0 / np.sqrt(d)) * rng.standard_normal((d, d)))
    params.add("tin/user_b", np.zeros(d))

    trunk_in = width + n_pairs + d
    sizes = (trunk_in,) + tuple(cfg.tower_hidden)
    for li in range(len(cfg.tower_hidden)):
        fan_in = sizes[li]
        params.add(f"tower/w{li}", (1.0 / np.sqrt(fan_in))
                   * rng.standard_normal((fan_in, sizes[li + 1])))
        params.add(f"tower/b{li}", np.zeros(sizes[li + 1]))
        params.add(f"tower/gate_w{li}", (1.0 / np.sqrt(d))
                   * rng.standard_normal((d, sizes[li + 1])))
        params.add(f"tower/gate_b{li}", np.zeros(sizes[li + 1]))
    last = sizes[-1]
    for t in HORIZONS:
        params.add(f"head/{t}/w", (1.0 / np.sqrt(last)) * rng.standard_normal((last, 3)))
        params.add(f"head/{t}/b", np.zeros(3))
    return params


# ---------------------------------------------------------------------------
# blocks (each takes/returns Vars so the finite-difference harness applies)


def _one_hot_const(codes, cardinality):
    m = np.zeros((len(codes), cardinality))
    m[np.arange(len(codes)), codes] = 1.0
    return ad.const(m)


def embed_fields(batch, pvars, schema):
    """Per-field (B, d) embeddings plus the domain embedding."""
    embs = {}
    for name, card in schema.fields:
        codes = batch.codes[name]
        if np.any(codes >= card) or np.any(codes < 0):
            raise ValueError(f"code out of range for field {name!r}")
        embs[name] = ad.matmul(_one_hot_const(codes, card), pvars[f"emb/{name}"])
    return embs, embs[schema.domain_field]


def pair_weight_matrix(pair_vec, c):
    """Symmetric zero-diagonal c x c view of the flat pair weights."""
    mat = np.zeros((c, c))
    iu, ju = np.triu_indices(c, k=1)
    mat[iu, ju] = pair_vec
    mat[ju, iu] = pair_vec
    return mat


def fwfm(field_embs, pair_weights, schema):
    """Field-pair interaction scores r_ij * dot(v_i, v_j), i < j."""
    names = [n for n, _ in schema.fields]
    dots = []
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            dot = ad.reduce_sum(ad.mul(field_embs[names[a]], field_embs[names[b]]),
                                axis=1, keepdims=True)
            dots.append(dot)
    return ad.mul(ad.concat(dots, axis=1), pair_weights)


def epnet_gate(x_dom, pvars):
    """Domain gate in (0, 2)^d: can amplify as well as suppress."""
    h = ad.relu(ad.affine(x_dom, pvars["gate/w1"], pvars["gate/b1"]))
    return ad.mul(ad.sigmoid(ad.affine(h, pvars["gate/w2"], pvars["gate/b2"])), 2.0)


def epnet_modulate(field_embs, gate, schema):
    """Row-major flatten of the gated embeddings: (B, c*d)."""
    parts = [ad.mul(field_embs[name], gate) for name, _ in schema.fields]
    return ad.concat(parts, axis=1)


def partitioned_norm(z, domain_ids, pvars, state, cfg, mode, update_stats=True):
    """Domain-partitioned batch normalization with global + per-domain affine."""
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    n_domains = state.mean.shape[0]
    b = z.value.shape[0]
    out_parts = []
    for k in range(n_domains):
        mask = (domain_ids == k).astype(np.float64)
        n_k = int(mask.sum())
        sel = ad.const(np.eye(n_domains)[k][None, :])
        gamma_k = ad.matmul(sel, pvars["pn/gamma_k"])
        beta_k = ad.matmul(sel, pvars["pn/beta_k"])
        if mode == "train" and n_k >= 2:
            w = ad.const(mask[None, :] / n_k)
            mu = ad.matmul(w, z)                          # (1, width)
            var = ad.matmul(w, ad.square(ad.sub(z, mu)))  # biased, in-domain rows
            if update_stats:
                m = cfg.pn_momentum
                state.mean[k] = m * state.mean[k] + (1 - m) * mu.value[0]
                state.var[k] = m * state.var[k] + (1 - m) * var.value[0]
        else:
            if mode == "train":
                state.fallbacks += 1
            mu = ad.const(state.mean[k][None, :])
            var = ad.const(state.var[k][None, :])
        inv_std = ad.recip_pos(ad.sqrt_pos(ad.add(var, cfg.pn_eps)))
        normed = ad.mul(ad.sub(z, mu), inv_std)
        scaled = ad.add(ad.mul(ad.mul(normed, pvars["pn/gamma"]), gamma_k),
                        ad.add(pvars["pn/beta"], beta_k))
        out_parts.append(ad.mul(scaled, ad.const(mask[:, None])))
    out = out_parts[0]
    for part in out_parts[1:]:
        out = ad.add(out, part)
    return out


def tin_encode(batch, pvars, schema, target_emb, user_emb):
    """Target-attention pooling of the behavior sequence plus a user path.

    Sequence items are game embeddings shifted by a recency-rank
    embedding; attention logits are scaled dot products with the target
    game embedding.  Empty sequences reduce to the user-only path.
    """
    b, seq_len = batch.behavior_ids.shape
    d = schema.d
    g_card = schema.cardinality("game_id")
    table = pvars["emb/game_id"]
    logits = []
    items = []
    for pos in range(seq_len):
        item = ad.matmul(_one_hot_const(batch.behavior_ids[:, pos], g_card), table)
        sel = ad.const(np.eye(seq_len)[pos][None, :])
        h = ad.add(item, ad.matmul(sel, pvars["tin/rank_emb"]))
        items.append(h)
        logit = ad.mul(ad.reduce_sum(ad.mul(h, target_emb), axis=1, keepdims=True),
                       1.0 / np.sqrt(d))
        # push padded positions to effectively -inf before softmax
        logits.append(ad.add(logit, ad.const(
            (batch.behavior_mask[:, pos:pos + 1] - 1.0) * 1e9)))
    alpha = ad.softmax(ad.concat(logits, axis=1), axis=1)
    pooled = None
    for pos in range(seq_len):
        col = ad.matmul(alpha, ad.const(np.eye(seq_len)[:, pos:pos + 1]))
        term = ad.mul(ad.mul(items[pos], target_emb), col)
        pooled = term if pooled is None else ad.add(pooled, term)
    has_items = ad.const((batch.behavior_mask.sum(axis=1) > 0)
                         .astype(np.float64)[:, None])
    rep = ad.add(ad.mul(pooled, has_items),
                 ad.affine(user_emb, pvars["tin/user_w"], pvars["tin/user_b"]))
    return rep, alpha


def tower_forward(trunk, x_dom, pvars, cfg, mode):
    """Domain-gated MLP trunk; gates below tau are pruned at inference."""
    h = trunk
    gates = []
    for li in range(len(cfg.tower_hidden)):
        h = ad.relu(ad.affine(h, pvars[f"tower/w{li}"], pvars[f"tower/b{li}"]))
        gate = ad.sigmoid(ad.affine(x_dom, pvars[f"tower/gate_w{li}"],
                                    pvars[f"tower/gate_b{li}"]))
        if mode == "infer":
            gate = ad.mul(gate, ad.const((gate.value >= cfg.tau).astype(np.float64)))
        gates.append(gate)
        h = ad.mul(h, gate)
    heads = {}
    for t in HORIZONS:
        out = ad.affine(h, pvars[f"head/{t}/w"], pvars[f"head/{t}/b"])
        cols = [ad.reshape(ad.matmul(out, ad.const(np.eye(3)[:, i:i + 1])),
                           (out.value.shape[0],)) for i in range(3)]
        heads[t] = tuple(cols)  # (p_raw, mu, sigma_raw)
    return heads, gates


def gate_penalty(gates, rho):
    """L1 pressure on the (positive) tower gates, mean over batch."""
    total = None
    for gate in gates:
        s = ad.reduce_mean(ad.reduce_sum(gate, axis=1))
        total = s if total is None else ad.add(total, s)
    return ad.mul(total, float(rho))


def forward_graph(batch, pvars, schema, cfg, state, mode, update_stats=True):
    """Full composition; returns (head Vars, gates, diagnostics pieces)."""
    field_embs, x_dom = embed_fields(batch, pvars, schema)
    pair_scores = fwfm(field_embs, pvars["fwfm/pairs"], schema)
    gate = epnet_gate(x_dom, pvars)
    z = epnet_modulate(field_embs, gate, schema)
    z_pn = partitioned_norm(z, batch.domain_ids, pvars, state, cfg, mode,
                            update_stats)
    rep, _ = tin_encode(batch, pvars, schema, field_embs["game_id"],
                        field_embs["user_id"])
    trunk = ad.concat([z_pn, pair_scores, rep], axis=1)
    heads, gates = tower_forward(trunk, x_dom, pvars, cfg, mode)
    return heads, gates


def forward_full(batch, params, schema, cfg, state, mode, update_stats=True):
    """Numeric forward pass producing a ModelOutput."""
    pvars = params.leaves()
    heads, gates = forward_graph(batch, pvars, schema, cfg, state, mode,
                                 update_stats)
    gate_vals = np.concatenate([g.value.ravel() for g in gates])
    out_heads = {t: tuple(np.array(v.value, copy=True) for v in triple)
                 for t, triple in heads.items()}
    for t, triple in out_heads.items():
        for arr in triple:
            if not np.all(np.isfinite(arr)):
                raise ArithmeticError(f"non-finite head output for horizon {t}")
    return ModelOutput(out_heads, gate_vals,
                       float((gate_vals < cfg.tau).mean()),
                       batch.unknown_user, batch.unknown_game)


def task_loss_nodes(batch, pvars, schema, cfg, state, mode="train",
                    update_stats=True, loss_kind="ziln_nll"):
    """Scalar loss Var per horizon (data term + gate L1 penalty)."""
    heads, gates = forward_graph(batch, pvars, schema, cfg, state, mode,
                                 update_stats)
    penalty = gate_penalty(gates, cfg.rho)
    loss_fn = {"ziln_nll": ziln.nll_node,
               "squared_error": ziln.squared_error_node}[loss_kind]
    return {t: ad.add(loss_fn(*heads[t], batch.y[t]), penalty) for t in HORIZONS}


def predictions(output):
    """Per-horizon (expected_value, purchase_prob) arrays from a ModelOutput."""
    out = {}
    for t, (p_raw, mu, sigma_raw) in output.heads.items():
        out[t] = (ziln.expected_value(p_raw, mu, sigma_raw),
                  ziln.purchase_prob(p_raw))
    return out


def predict_samples(samples, users, games, params, schema, cfg, state,
                    chunk=512):
    """Chunked inference over a sample list; returns per-horizon arrays."""
    evs = {t: [] for t in HORIZONS}
    pbs = {t: [] for t in HORIZONS}
    ys = {t: [] for t in HORIZONS}
    for lo in range(0, len(samples), chunk):
        part = samples[lo:lo + chunk]
        batch = batch_from_samples(part, users, games, schema, cfg.behavior_len)
        preds = predictions(forward_full(batch, params, schema, cfg, state,
                                         "infer"))
        for t in HORIZONS:
            evs[t].append(preds[t][0])
            pbs[t].append(preds[t][1])
            ys[t].append(batch.y[t])
    return ({t: np.concatenate(ys[t]) for t in HORIZONS},
            {t: np.concatenate(evs[t]) for t in HORIZONS},
            {t: np.concatenate(pbs[t]) for t in HORIZONS})


# ---------------------------------------------------------------------------
# checkpointing


def save_checkpoint(path, params, schema, cfg, state, meta=None):
    doc = {
        "schema_version": SCHEMA_VERSION,
        "meta": meta or {},
        "field_schema": {"fields": schema.fields, "d": schema.d,
                         "domain_field": schema.domain_field},
        "model_config": {
            "gate_hidden": cfg.gate_hidden,
            "tower_hidden": list(cfg.tower_hidden),
            "behavior_len": cfg.behavior_len,
            "tau": cfg.tau, "rho": cfg.rho,
            "pn_momentum": cfg.pn_momentum, "pn_eps": cfg.pn_eps,
            "freeze_grl": cfg.freeze_grl,
        },
        "param_order": params.names(),
        "params": {name: {"shape": list(arr.shape), "values": arr.ravel().tolist()}
                   for name, arr in params.items()},
        "pn_state": {"mean": state.mean.tolist(), "var": state.var.tolist()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('schema_version')}")
    fs = doc["field_schema"]
    schema = FieldSchema([(n, c) for n, c in fs["fields"]], fs["d"],
                         fs["domain_field"])
    mc = doc["model_config"]
    cfg = ModelConfig(gate_hidden=mc["gate_hidden"],
                      tower_hidden=tuple(mc["tower_hidden"]),
                      behavior_len=mc["behavior_len"], tau=mc["tau"],
                      rho=mc["rho"], pn_momentum=mc["pn_momentum"],
                      pn_eps=mc["pn_eps"], freeze_grl=mc["freeze_grl"])
    params = ad.ParamStore()
    for name in doc.get("param_order", list(doc["params"])):
        blob = doc["params"][name]
        params.add(name, np.asarray(blob["values"]).reshape(blob["shape"]))
    state = PnState(np.asarray(doc["pn_state"]["mean"]),
                    np.asarray(doc["pn_state"]["var"]))
    return params, schema, cfg, state, doc.get("meta", {})
