"""Masked-autoencoder pretraining on meta-path payment graphs.

Historical purchase events are projected onto two weighted homogeneous
graphs (user-game-user and game-user-game, edge weight = common-neighbor
count).  A two-layer degree-normalized aggregation encoder is trained to
reconstruct masked node attributes and adjacency rows under a cosine
reconstruction loss; the resulting embeddings seed the backbone's id
tables.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .datagen import GAME_FIELDS, USER_FIELDS
from .rng import stream


@dataclass
class MetaPathGraph:
    meta_path: str  # "user-game-user" or "game-user-game"
    n: int
    adjacency: np.ndarray  # symmetric, non-negative integer weights, zero diag
    attributes: np.ndarray  # n x d_attr one-hot features

    def copy(self):
        return MetaPathGraph(self.meta_path, self.n, self.adjacency.copy(),
                             self.attributes.copy())


@dataclass
class MaskPlan:
    masked_nodes: np.ndarray
    masked_edges: list  # (i, j) pairs, i < j
    node_truth: np.ndarray  # original attribute rows for masked nodes
    edge_truth: np.ndarray  # original weights for masked edges

    @property
    def mask_token(self):
        return np.zeros(self.node_truth.shape[1] if self.node_truth.size else 0)


@dataclass
class GrlConfig:
    d_emb: int = 8
    hidden: int = 16
    xi_e: float = 2.0
    xi_a: float = 2.0
    zeta: float = 0.5
    mask_rate_attr: float = 0.3
    mask_rate_edge: float = 0.3
    epochs: int = 200
    lr: float = 0.05


def one_hot(codes, cardinality):
    out = np.zeros((len(codes), cardinality))
    out[np.arange(len(codes)), codes] = 1.0
    return out


def _attribute_matrix(records, fields):
    cols = [one_hot([getattr(r, f) for r in records], card)
            for f, card in fields.items()]
    return np.concatenate(cols, axis=1)


def build_meta_path_graphs(events, users, games):
    """Project purchase events onto the two meta-path graphs."""
    if not events:
        raise ValueError("no events to build graphs from")
    n_u, n_g = len(users), len(games)
    inter = np.zeros((n_u, n_g))
    for ev in events:
        inter[ev.user_id, ev.game_id] = 1.0
    user_adj = inter @ inter.T
    np.fill_diagonal(user_adj, 0.0)
    game_adj = inter.T @ inter
    np.fill_diagonal(game_adj, 0.0)
    user_graph = MetaPathGraph("user-game-user", n_u, user_adj,
                               _attribute_matrix(users, USER_FIELDS))
    game_graph = MetaPathGraph("game-user-game", n_g, game_adj,
                               _attribute_matrix(games, GAME_FIELDS))
    return user_graph, game_graph


def apply_mask(graph, rates, seed):
    """Mask floor(rate * n) node attribute rows and a share of edges.

    Masked attributes become the zero token; masked edges are zeroed
    symmetrically.  The returned plan holds the ground truth, so the
    original graph is recoverable.
    """
    rate_attr, rate_edge = rates
    if not (0.0 <= rate_attr < 1.0 and 0.0 <= rate_edge < 1.0):
        raise ValueError("mask rates must lie in [0, 1)")
    rng = stream(seed, f"mask/{graph.meta_path}")
    masked = graph.copy()

    k_nodes = int(rate_attr * graph.n)
    nodes = np.sort(rng.choice(graph.n, size=k_nodes, replace=False))
    node_truth = graph.attributes[nodes].copy()
    masked.attributes[nodes] = 0.0

    iu, ju = np.triu_indices(graph.n, k=1)
    present = graph.adjacency[iu, ju] > 0
    edge_pool = list(zip(iu[present].tolist(), ju[present].tolist()))
    k_edges = int(rate_edge * len(edge_pool))
    chosen = rng.choice(len(edge_pool), size=k_edges, replace=False) if k_edges else []
    edges = [edge_pool[c] for c in sorted(chosen)]
    edge_truth = np.array([graph.adjacency[i, j] for i, j in edges])
    for i, j in edges:
        masked.adjacency[i, j] = 0.0
        masked.adjacency[j, i] = 0.0
    return masked, MaskPlan(nodes, edges, node_truth, edge_truth)


def restore_masked(masked_graph, plan):
    """Invert apply_mask."""
    graph = masked_graph.copy()
    graph.attributes[plan.masked_nodes] = plan.node_truth
    for (i, j), w in zip(plan.masked_edges, plan.edge_truth):
        graph.adjacency[i, j] = w
        graph.adjacency[j, i] = w
    return graph


def init_graph_params(graphs, config, seed):
    """One ParamStore covering the encoders/decoders of all meta paths."""
    rng = stream(seed, "grl/init")
    params = ad.ParamStore()
    for g in graphs:
        p = g.meta_path
        d_attr = g.attributes.shape[1]
        scale1 = 1.0 / np.sqrt(d_attr)
        scale2 = 1.0 / np.sqrt(config.hidden)
        params.add(f"{p}/enc_w1", scale1 * rng.standard_normal((d_attr, config.hidden)))
        params.add(f"{p}/enc_b1", np.zeros(config.hidden))
        params.add(f"{p}/enc_w2", scale2 * rng.standard_normal((config.hidden, config.d_emb)))
        params.add(f"{p}/enc_b2", np.zeros(config.d_emb))
        params.add(f"{p}/dec_w", scale2 * rng.standard_normal((config.d_emb, d_attr)))
        params.add(f"{p}/dec_b", np.zeros(d_attr))
    return params


def _degree_normalize(adjacency):
    deg = adjacency.sum(axis=1, keepdims=True)
    return np.divide(adjacency, deg, out=np.zeros_like(adjacency), where=deg > 0)


def _encode(graph, pvars, prefix):
    prop = ad.const(_degree_normalize(graph.adjacency))
    x = ad.const(graph.attributes)
    h = ad.tanh(ad.affine(ad.matmul(prop, x), pvars[f"{prefix}/enc_w1"],
                          pvars[f"{prefix}/enc_b1"]))
    h = ad.tanh(ad.affine(ad.matmul(prop, h), pvars[f"{prefix}/enc_w2"],
                          pvars[f"{prefix}/enc_b2"]))
    return h


def _reconstruct(graph, pvars):
    """(embeddings, adjacency reconstruction, attribute reconstruction) Vars."""
    h = _encode(graph, pvars, graph.meta_path)
    off_diag = ad.const(1.0 - np.eye(graph.n))
    a_hat = ad.mul(ad.matmul(h, ad.transpose(h)), off_diag)
    x_hat = ad.affine(h, pvars[f"{graph.meta_path}/dec_w"],
                      pvars[f"{graph.meta_path}/dec_b"])
    return h, a_hat, x_hat


def grl_forward(masked_graph, params):
    """Numeric wrapper: run the encoder/decoders on one graph."""
    pvars = params.leaves()
    h, a_hat, x_hat = _reconstruct(masked_graph, pvars)
    return h.value.copy(), a_hat.value.copy(), x_hat.value.copy()


def _cosine_terms(truth, recon, xi, diagnostics):
    """(1 - cos(row, row_hat))^xi per row; zero-norm rows get cos = 0."""
    t_norm_sq = (truth * truth).sum(axis=1)
    r_norm_sq_val = (recon.value * recon.value).sum(axis=1)
    ok = (t_norm_sq > 0) & (r_norm_sq_val > 0)
    diagnostics["zero_norm_rows"] += int((~ok).sum())

    dots = ad.reduce_sum(ad.mul(ad.const(truth), recon), axis=1)
    # pad unsafe rows so sqrt/log stay defined; their cosine is masked to 0
    pad = np.where(ok, 0.0, 1.0)
    r_norm = ad.sqrt_pos(ad.add(ad.reduce_sum(ad.square(recon), axis=1), ad.const(pad)))
    t_norm = np.sqrt(np.where(ok, t_norm_sq, 1.0))
    cos = ad.mul(ad.mul(dots, ad.recip_pos(r_norm)), ad.const(ok / t_norm))
    base = ad.sub(ad.const(np.ones(len(t_norm_sq))), cos)
    if float(xi) == int(xi) and int(xi) >= 1:
        term = base
        for _ in range(int(xi) - 1):
            term = ad.mul(term, base)
        return term
    return ad.pow_pos(ad.add(base, 1e-12), xi)


def grl_loss_node(graphs, recon, plans, xi_e, xi_a, zeta, diagnostics=None):
    """Combined reconstruction loss as an autodiff node.

    ``graphs`` are the unmasked truths, ``recon`` the per-graph
    (a_hat, x_hat) Var pairs, ``plans`` the mask plans.  Edge terms average
    over all nodes per meta path, then over meta paths; attribute terms
    average over all masked nodes.
    """
    diagnostics = diagnostics if diagnostics is not None else {"zero_norm_rows": 0}
    edge_means = []
    attr_sums = []
    n_masked = 0
    for graph, (a_hat, x_hat), plan in zip(graphs, recon, plans):
        edge_means.append(ad.reduce_mean(
            _cosine_terms(graph.adjacency, a_hat, xi_e, diagnostics)))
        if len(plan.masked_nodes):
            rows = plan.masked_nodes
            sel = np.zeros((len(rows), graph.n))
            sel[np.arange(len(rows)), rows] = 1.0
            x_hat_masked = ad.matmul(ad.const(sel), x_hat)
            terms = _cosine_terms(graph.attributes[rows], x_hat_masked, xi_a,
                                  diagnostics)
            attr_sums.append(ad.reduce_sum(terms))
            n_masked += len(rows)
    l_e = ad.mul(ad.reduce_sum(ad.concat([ad.reshape(e, (1,)) for e in edge_means])),
                 1.0 / len(edge_means))
    if n_masked:
        l_a = ad.mul(ad.reduce_sum(ad.concat([ad.reshape(a, (1,)) for a in attr_sums])),
                     1.0 / n_masked)
    else:
        l_a = ad.const(0.0)
    return ad.add(l_a, ad.mul(l_e, float(zeta))), diagnostics


def grl_loss(graphs, a_hats, x_hats, plans, xi_e, xi_a, zeta):
    """Numeric loss for given reconstructions (lists, one entry per meta path)."""
    recon = [(ad.const(a), ad.const(x)) for a, x in zip(a_hats, x_hats)]
    node, diagnostics = grl_loss_node(graphs, recon, plans, xi_e, xi_a, zeta)
    return float(node.value), diagnostics


def train_grl(graphs, config, seed):
    """Full-batch gradient descent on the combined reconstruction loss."""
    if config.epochs < 1:
        raise ValueError("epochs must be >= 1")
    masked = []
    plans = []
    for g in graphs:
        m, plan = apply_mask(g, (config.mask_rate_attr, config.mask_rate_edge), seed)
        masked.append(m)
        plans.append(plan)
    params = init_graph_params(graphs, config, seed)

    def loss_block(_inputs, pvars):
        recon = [_reconstruct(m, pvars)[1:] for m in masked]
        node, _ = grl_loss_node(graphs, recon, plans, config.xi_e, config.xi_a,
                                config.zeta)
        return node

    trace = []
    for _ in range(config.epochs):
        rec = ad.backward(loss_block, {}, params)
        if not np.isfinite(rec.loss):
            raise ArithmeticError(f"non-finite pretraining loss: {rec.loss}")
        trace.append(rec.loss)
        for name in params.names():
            params[name] = params[name] - config.lr * rec.grads[name]
    final = float(ad.forward(loss_block, {}, params))
    trace.append(final)
    if final > trace[0]:
        raise ArithmeticError("pretraining diverged: final loss above initial")
    return params, trace, plans


def node_embeddings(params, graphs):
    """Embeddings of the unmasked graphs under the trained encoder."""
    out = {}
    pvars = params.leaves()
    for g in graphs:
        out[g.meta_path] = _encode(g, pvars, g.meta_path).value.copy()
    return out


def export_embeddings(params, graphs, path, meta=None):
    """Write embeddings.jsonl: node_kind, node_id, vector."""
    kinds = {"user-game-user": "user", "game-user-game": "game"}
    embs = node_embeddings(params, graphs)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"_meta": dict(meta or {}, kind="embeddings")},
                            sort_keys=True) + "\n")
        for g in graphs:
            kind = kinds[g.meta_path]
            for i, vec in enumerate(embs[g.meta_path]):
                if not np.all(np.isfinite(vec)):
                    raise ValueError(f"non-finite embedding for {kind} {i}")
                fh.write(json.dumps({"node_kind": kind, "node_id": i,
                                     "vector": vec.tolist()}, sort_keys=True) + "\n")


def read_embeddings(path):
    users = {}
    games = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            row = json.loads(line)
            if "_meta" in row:
                continue
            target = users if row["node_kind"] == "user" else games
            target[int(row["node_id"])] = np.asarray(row["vector"], dtype=np.float64)
    return users, games
