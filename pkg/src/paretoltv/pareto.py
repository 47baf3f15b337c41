"""Multi-task training via a non-dominating gradient direction.

Each step backpropagates the three horizon losses separately, measures how
far the weighted losses are from uniform (a KL score), and combines the
task gradients through a small quadratic program.  The resulting direction
never increases a constrained task loss to first order, which is what
keeps the horizons from fighting each other.

An outer search loop samples importance vectors on the unit sphere, trains
one model per vector and keeps the run with the best balanced validation
ranking quality.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import nnls

from . import autodiff as ad
from . import metrics as metrics_mod
from . import model as model_mod
from .rng import stream

M_TASKS = 3
HORIZONS = (3, 7, 30)
_CLAMP = 1e-12
_GRL_TABLES = ("emb/user_id", "emb/game_id")

STEP_LOG_COLUMNS = ("step", "l3", "l7", "l30", "mu_kl", "mode",
                    "beta1", "beta2", "beta3", "dnd_norm",
                    "cos12", "cos13", "cos23", "relaxed")


@dataclass(frozen=True)
class WeightVector:
    lam: np.ndarray  # (3,) positive, unit norm

    def __post_init__(self):
        lam = np.asarray(self.lam, dtype=np.float64)
        if lam.shape != (M_TASKS,) or np.any(lam <= 0):
            raise ValueError("weight vector needs 3 positive components")
        if abs(np.linalg.norm(lam) - 1.0) > 1e-9:
            raise ValueError("weight vector must have unit norm")
        object.__setattr__(self, "lam", lam)


@dataclass
class TaskState:
    losses: np.ndarray  # (3,) in horizon order 3, 7, 30
    grads: np.ndarray   # (3, n) rows aligned with the losses

    def __post_init__(self):
        if not np.all(np.isfinite(self.losses)):
            raise ArithmeticError("non-finite task losses")


@dataclass
class QpSolution:
    beta: np.ndarray
    objective_value: float
    active_constraints: list
    kkt_residual: float
    relaxed: bool = False


def sample_weight_vector(rng):
    """Spherical importance vector with both angles in [pi/6, pi/3]."""
    u = rng.uniform(1.0 / 3.0, 2.0 / 3.0)
    v = rng.uniform(1.0 / 3.0, 2.0 / 3.0)
    theta = 0.5 * math.pi * u
    phi = math.acos(v)
    lam = np.array([math.sin(phi) * math.cos(theta),
                    math.sin(phi) * math.sin(theta),
                    math.cos(phi)])
    return WeightVector(lam / np.linalg.norm(lam))


def compute_task_state(batch, params, schema, cfg, pn_state,
                       loss_kind="ziln_nll", update_stats=True):
    """Losses and flattened gradients from three backward passes."""
    if batch.size == 0:
        raise ValueError("batch must be non-empty")
    losses = np.zeros(M_TASKS)
    rows = []
    for i, t in enumerate(HORIZONS):
        def block(_, pvars, _t=t, _first=(i == 0)):
            nodes = model_mod.task_loss_nodes(
                batch, pvars, schema, cfg, pn_state,
                update_stats=update_stats and _first, loss_kind=loss_kind)
            return nodes[_t]

        try:
            rec = ad.backward(block, None, params)
        except (ValueError, ArithmeticError) as exc:
            ids = sorted(set(batch.codes["user_id"].tolist()))
            raise ArithmeticError(
                f"task {t} loss failed on batch with user ids {ids[:10]}: {exc}"
            ) from exc
        losses[i] = rec.loss
        grad = rec.flat()
        if cfg.freeze_grl:
            off = 0
            for name, arr in params.items():
                if name in _GRL_TABLES:
                    grad[off:off + arr.size] = 0.0
                off += arr.size
        rows.append(grad)
    return TaskState(losses, np.stack(rows))


def _weighted_shares(losses, lam):
    c = np.asarray(lam, dtype=np.float64) * np.asarray(losses, dtype=np.float64)
    total = c.sum()
    if total <= 0:
        return c, None
    return c, np.maximum(c / total, _CLAMP)


def uniformity_kl(losses, lam):
    """KL of the normalized weighted losses from the uniform vector."""
    losses = np.asarray(losses, dtype=np.float64)
    if np.any(losses < 0):
        raise ValueError("losses must be non-negative")
    c, c_hat = _weighted_shares(losses, lam)
    if c_hat is None:
        return 0.0  # every task already at its optimum
    return float(max((c_hat * np.log(M_TASKS * c_hat)).sum(), 0.0))


def anchor_direction(losses, lam, mu_kl, eps):
    """Target vector for the QP: rebalance when far from uniform,
    plain weighted descent otherwise."""
    c, c_hat = _weighted_shares(losses, lam)
    if c_hat is None:
        return np.zeros(M_TASKS)
    if mu_kl > eps:
        return c * (np.log(M_TASKS * c_hat) - mu_kl)
    return c


def _constraint_rows(mmat, j_set):
    """Rows (A, b) of the polytope A beta >= b."""
    rows = [np.eye(M_TASKS)[i] for i in range(M_TASKS)]
    b = [0.0] * M_TASKS
    rows.append(-np.ones(M_TASKS))
    b.append(-1.0)
    for j in j_set:
        rows.append(mmat[j])
        b.append(0.0)
    return np.asarray(rows), np.asarray(b)


def _kkt_residual(beta, mmat, a, amat, bvec, act_tol=1e-7):
    grad = 2.0 * mmat.T @ (mmat @ beta - a)
    slack = amat @ beta - bvec
    primal = max(0.0, float(-(slack.min()))) if len(slack) else 0.0
    active = np.flatnonzero(slack <= act_tol)
    if len(active) == 0:
        stat = float(np.linalg.norm(grad, np.inf))
        return max(stat, primal), []
    mult, _ = nnls(amat[active].T, grad)
    stat = float(np.linalg.norm(amat[active].T @ mult - grad, np.inf))
    return max(stat, primal), active.tolist()


def _minimize_on(mmat, a, amat, bvec, tol=1e-6):
    """Exact solve by active-set enumeration.

    The problem is three-dimensional with at most seven rows, so every
    candidate equality set (size 0..3) can be tried: solve the KKT linear
    system restricted to that set, keep the feasible candidate with the
    lowest objective.  The optimum's active set is among the candidates,
    which makes the search exact up to linear-algebra precision.
    """
    q = 2.0 * mmat.T @ mmat
    lin = 2.0 * mmat.T @ a
    n_rows = len(bvec)
    best = np.zeros(M_TASKS)
    best_obj = float(np.square(mmat @ best - a).sum())
    for r in range(M_TASKS + 1):
        for subset in itertools.combinations(range(n_rows), r):
            a_s = amat[list(subset)]
            kkt = np.zeros((M_TASKS + r, M_TASKS + r))
            kkt[:M_TASKS, :M_TASKS] = q
            rhs = np.concatenate([lin, bvec[list(subset)]])
            if r:
                kkt[:M_TASKS, M_TASKS:] = -a_s.T
                kkt[M_TASKS:, :M_TASKS] = a_s
            try:
                sol = np.linalg.solve(kkt, rhs)
            except np.linalg.LinAlgError:
                sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
            beta = sol[:M_TASKS]
            beta[np.abs(beta) < 1e-13] = 0.0
            if not np.all(amat @ beta >= bvec - 1e-9):
                continue
            obj = float(np.square(mmat @ beta - a).sum())
            if obj < best_obj - 1e-15:
                best_obj = obj
                best = beta
    res, active = _kkt_residual(best, mmat, a, amat, bvec)
    return best, res, active, res <= tol


def solve_qp(grads, a, losses, lam, eps, epo_convention=False):
    """Combination weights beta minimizing ||G G^T beta - a||^2 on the
    simplex, with non-increase constraints on the gated task set."""
    grads = np.asarray(grads, dtype=np.float64)
    if grads.shape[0] != M_TASKS:
        raise ValueError("expected one gradient row per task")
    mmat = grads @ grads.T
    mu_kl = uniformity_kl(losses, lam)
    weighted = np.asarray(lam) * np.asarray(losses)
    j_star = [int(weighted.argmax())]
    gate_star = (mu_kl <= eps) if not epo_convention else (mu_kl > eps)
    j_set = j_star if gate_star else list(range(M_TASKS))

    amat, bvec = _constraint_rows(mmat, j_set)
    beta, res, active, ok = _minimize_on(mmat, np.asarray(a, dtype=np.float64),
                                         amat, bvec)
    relaxed = False
    if not ok:
        # numerical trouble: drop the non-increase rows and retry
        amat, bvec = _constraint_rows(mmat, [])
        beta, res, active, ok = _minimize_on(mmat, np.asarray(a), amat, bvec)
        relaxed = True
    obj = float(np.square(mmat @ beta - a).sum())
    return QpSolution(beta, obj, active, res, relaxed)


def pairwise_cosines(grads):
    """cos(g_i, g_j) for i<j; zero-norm gradients give 0 plus a flag."""
    norms = np.linalg.norm(grads, axis=1)
    out = []
    degenerate = False
    for i in range(M_TASKS):
        for j in range(i + 1, M_TASKS):
            if norms[i] == 0 or norms[j] == 0:
                out.append(0.0)
                degenerate = True
            else:
                out.append(float(grads[i] @ grads[j] / (norms[i] * norms[j])))
    return out, degenerate


def pareto_train_step(params, batch, weight, schema, cfg, pn_state, step_idx,
                      eta, eps=1e-2, loss_kind="ziln_nll",
                      epo_convention=False):
    """One non-dominating update; returns the step-log row."""
    if eta < 0:
        raise ValueError("step size must be non-negative")
    ts = compute_task_state(batch, params, schema, cfg, pn_state, loss_kind)
    mu_kl = uniformity_kl(ts.losses, weight.lam)
    mode = "balance" if mu_kl > eps else "descent"
    a = anchor_direction(ts.losses, weight.lam, mu_kl, eps)
    sol = solve_qp(ts.grads, a, ts.losses, weight.lam, eps, epo_convention)
    d_nd = ts.grads.T @ sol.beta
    params.assign_flat(params.flat() - eta * d_nd)
    cosines, _ = pairwise_cosines(ts.grads)
    return {
        "step": step_idx,
        "l3": float(ts.losses[0]), "l7": float(ts.losses[1]),
        "l30": float(ts.losses[2]),
        "mu_kl": float(mu_kl), "mode": mode,
        "beta1": float(sol.beta[0]), "beta2": float(sol.beta[1]),
        "beta3": float(sol.beta[2]),
        "dnd_norm": float(np.linalg.norm(d_nd)),
        "cos12": cosines[0], "cos13": cosines[1], "cos23": cosines[2],
        "relaxed": sol.relaxed,
    }


def plain_train_step(params, batch, schema, cfg, pn_state, step_idx, eta,
                     loss_kind="ziln_nll"):
    """Baseline update: gradient of the mean of the three task losses."""
    ts = compute_task_state(batch, params, schema, cfg, pn_state, loss_kind)
    d = ts.grads.mean(axis=0)
    params.assign_flat(params.flat() - eta * d)
    cosines, _ = pairwise_cosines(ts.grads)
    return {
        "step": step_idx,
        "l3": float(ts.losses[0]), "l7": float(ts.losses[1]),
        "l30": float(ts.losses[2]),
        "mu_kl": 0.0, "mode": "plain",
        "beta1": 1.0 / 3, "beta2": 1.0 / 3, "beta3": 1.0 / 3,
        "dnd_norm": float(np.linalg.norm(d)),
        "cos12": cosines[0], "cos13": cosines[1], "cos23": cosines[2],
        "relaxed": False,
    }


@dataclass
class TrainSettings:
    steps: int = 200
    batch_size: int = 128
    eta: float = 0.05
    eps: float = 1e-2
    loss_kind: str = "ziln_nll"
    epo_convention: bool = False
    use_pareto: bool = True


def train_model(train_samples, users, games, params, schema, cfg, pn_state,
                weight, settings, seed, run_label="run"):
    """Minibatch training loop; returns step-log rows (params updated
    in place)."""
    rng = stream(seed, f"train/batches/{run_label}")
    n = len(train_samples)
    rows = []
    for step_idx in range(settings.steps):
        take = min(settings.batch_size, n)
        idx = rng.choice(n, size=take, replace=False)
        batch = model_mod.batch_from_samples([train_samples[i] for i in idx],
                                             users, games, schema,
                                             cfg.behavior_len)
        if settings.use_pareto:
            row = pareto_train_step(params, batch, weight, schema, cfg,
                                    pn_state, step_idx, settings.eta,
                                    settings.eps, settings.loss_kind,
                                    settings.epo_convention)
        else:
            row = plain_train_step(params, batch, schema, cfg, pn_state,
                                   step_idx, settings.eta, settings.loss_kind)
        rows.append(row)
    return rows


def write_step_log(rows, path, meta=None):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if meta:
            fh.write("# " + json.dumps(meta, sort_keys=True) + "\n")
        writer = csv.DictWriter(fh, fieldnames=STEP_LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in STEP_LOG_COLUMNS})


def read_step_log(path):
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        rows = []
        for row in csv.DictReader(lines):
            parsed = dict(row)
            for k in STEP_LOG_COLUMNS:
                if k in ("mode",):
                    continue
                if k == "relaxed":
                    parsed[k] = row[k] == "True"
                elif k == "step":
                    parsed[k] = int(row[k])
                else:
                    parsed[k] = float(row[k])
            rows.append(parsed)
    return rows


# ---------------------------------------------------------------------------
# outer search over importance vectors


@dataclass
class ParetoRunResult:
    run_index: int
    lam: np.ndarray
    seed: int
    metrics: dict          # horizon -> {nmae, auc, n_gini}
    score: float           # mean val N-GINI minus std across horizons
    checkpoint_path: str
    step_rows: list = field(default_factory=list)
    error: str = ""

    def record(self):
        return {
            "run_index": self.run_index,
            "lambda": [float(x) for x in self.lam],
            "seed": self.seed,
            "metrics": {str(t): self.metrics[t] for t in self.metrics},
            "score": self.score,
            "selector": "mean_val_n_gini_minus_std",
            "checkpoint_path": self.checkpoint_path,
            "error": self.error,
        }


def run_score(per_horizon):
    ginis = np.array([per_horizon[t]["n_gini"] for t in HORIZONS])
    return float(ginis.mean() - ginis.std())


def optimal_search(dataset, init_params, schema, cfg, pn_state, settings,
                   n_runs, seed, out_dir):
    """Train one model per sampled importance vector, keep the best.

    ``dataset`` holds train/valid sample lists plus catalogs.  Every run
    starts from a copy of the shared initialization.  Failed runs are
    logged and skipped; it is an error only if all runs fail.
    """
    if n_runs < 1 or settings.steps < 1:
        raise ValueError("need at least one run and one step")
    results = []
    for k in range(n_runs):
        weight = sample_weight_vector(stream(seed, f"pareto/lambda/{k}"))
        params = init_params.copy()
        state = pn_state.copy()
        ckpt = f"{out_dir}/model_run{k}.json"
        try:
            rows = train_model(dataset["train"], dataset["users"],
                               dataset["games"], params, schema, cfg, state,
                               weight, settings, seed, run_label=f"k{k}")
            y, ev, pb = model_mod.predict_samples(
                dataset["valid"], dataset["users"], dataset["games"],
                params, schema, cfg, state)
            per_h = metrics_mod.evaluate_horizons(y, ev, pb)
            model_mod.save_checkpoint(ckpt, params, schema, cfg, state,
                                      {"seed": seed, "run_index": k,
                                       "lambda": [float(x) for x in weight.lam]})
            results.append(ParetoRunResult(k, weight.lam, seed, per_h,
                                           run_score(per_h), ckpt, rows))
        except (ValueError, ArithmeticError) as exc:
            results.append(ParetoRunResult(k, weight.lam, seed, {},
                                           float("-inf"), "", [],
                                           error=str(exc)))
    with open(f"{out_dir}/runs.jsonl", "w", encoding="utf-8") as fh:
        for res in results:
            fh.write(json.dumps(res.record(), sort_keys=True) + "\n")
    usable = [r for r in results if not r.error]
    if not usable:
        raise RuntimeError("every search run failed")
    best = max(usable, key=lambda r: (r.score, -r.run_index))
    return best, results


def select_best(records):
    """Replay the F* selection from persisted run records."""
    usable = [r for r in records if not r.get("error")]
    if not usable:
        raise RuntimeError("no usable run records")
    return max(usable, key=lambda r: (r["score"], -r["run_index"]))


# ---------------------------------------------------------------------------
# gradient-conflict report


def conflict_report(step_rows, path=None):
    """Summarize pairwise gradient agreement over logged steps."""
    if not step_rows:
        raise ValueError("need at least one logged step")
    pairs = ("cos12", "cos13", "cos23")
    conflicts = 0
    angles = {p: [] for p in pairs}
    for row in step_rows:
        cosines = [float(row[p]) for p in pairs]
        if any(c < 0 for c in cosines):
            conflicts += 1
        for p, c in zip(pairs, cosines):
            angles[p].append(math.acos(min(1.0, max(-1.0, c))))
    summary = {
        "steps": len(step_rows),
        "conflict_fraction": conflicts / len(step_rows),
        "mean_angle_12": float(np.mean(angles["cos12"])),
        "mean_angle_13": float(np.mean(angles["cos13"])),
        "mean_angle_23": float(np.mean(angles["cos23"])),
    }
    if path is not None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["metric", "value"])
            for key, value in summary.items():
                writer.writerow([key, value])
    return summary
