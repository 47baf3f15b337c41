"""Small reverse-mode gradient engine over dense float64 arrays.

The engine supports a fixed family of primitives (affine maps, pointwise
nonlinearities, softmax, elementwise add/mul, concatenation, reshape and
reductions).  Every model block in this package is composed from these
primitives, so the finite-difference harness at the bottom of the module
covers all of them automatically.

Evaluation is deterministic: identical inputs and parameters give
bitwise-identical forward values and gradients.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible operand shapes."""

    def __init__(self, primitive, *shapes):
        self.primitive = primitive
        self.shapes = shapes
        super().__init__(f"{primitive}: incompatible shapes {shapes}")


def tensor(data):
    """Validate and return a float64 array; rejects NaN/Inf."""
    arr = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("tensor values must be finite")
    return arr


class Var:
    """One node of the evaluation tape.

    ``parents`` holds the upstream nodes and ``vjps`` the matching
    vector-Jacobian closures.  Leaf nodes (constants, parameters) have
    neither.
    """

    __slots__ = ("value", "parents", "vjps")

    def __init__(self, value, parents=(), vjps=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.parents = parents
        self.vjps = vjps

    @property
    def shape(self):
        return self.value.shape


def const(x):
    return Var(np.asarray(x, dtype=np.float64))


def _as_var(x):
    return x if isinstance(x, Var) else const(x)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = _as_var(a), _as_var(b)
    try:
        out = a.value + b.value
    except ValueError:
        raise ShapeError("add", a.shape, b.shape)
    return Var(out, (a, b), (lambda g: _unbroadcast(g, a.value.shape),
                             lambda g: _unbroadcast(g, b.value.shape)))


def mul(a, b):
    a, b = _as_var(a), _as_var(b)
    try:
        out = a.value * b.value
    except ValueError:
        raise ShapeError("mul", a.shape, b.shape)
    return Var(out, (a, b), (lambda g: _unbroadcast(g * b.value, a.value.shape),
                             lambda g: _unbroadcast(g * a.value, b.value.shape)))


def matmul(a, b):
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2 or a.value.shape[1] != b.value.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)
    out = a.value @ b.value
    return Var(out, (a, b), (lambda g: g @ b.value.T, lambda g: a.value.T @ g))


def affine(x, w, b=None):
    """x @ w + b, with x of shape (k,) or (batch, k)."""
    x, w = _as_var(x), _as_var(w)
    squeeze = x.value.ndim == 1
    xv = x.value[None, :] if squeeze else x.value
    if xv.ndim != 2 or w.value.ndim != 2 or xv.shape[1] != w.value.shape[0]:
        raise ShapeError("affine", x.shape, w.shape)
    out = xv @ w.value
    if squeeze:
        out = out[0]

    def gx(g):
        gm = g[None, :] if squeeze else g
        r = gm @ w.value.T
        return r[0] if squeeze else r

    def gw(g):
        gm = g[None, :] if squeeze else g
        return (x.value[None, :] if squeeze else x.value).T @ gm

    node = Var(out, (x, w), (gx, gw))
    if b is None:
        return node
    return add(node, b)


def transpose(a):
    a = _as_var(a)
    return Var(a.value.T, (a,), (lambda g: g.T,))


def relu(a):
    a = _as_var(a)
    mask = (a.value > 0).astype(np.float64)
    return Var(a.value * mask, (a,), (lambda g: g * mask,))


def sigmoid(a):
    a = _as_var(a)
    out = np.empty_like(a.value)
    pos = a.value >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a.value[pos]))
    e = np.exp(a.value[~pos])
    out[~pos] = e / (1.0 + e)
    return Var(out, (a,), (lambda g: g * out * (1.0 - out),))


def tanh(a):
    a = _as_var(a)
    out = np.tanh(a.value)
    return Var(out, (a,), (lambda g: g * (1.0 - out * out),))


def exp(a):
    a = _as_var(a)
    out = np.exp(a.value)
    return Var(out, (a,), (lambda g: g * out,))


def log(a):
    a = _as_var(a)
    out = np.log(a.value)
    return Var(out, (a,), (lambda g: g / a.value,))


def softmax(a, axis=-1):
    a = _as_var(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return Var(out, (a,), (vjp,))


def concat(parts, axis=0):
    parts = [_as_var(p) for p in parts]
    try:
        out = np.concatenate([p.value for p in parts], axis=axis)
    except ValueError:
        raise ShapeError("concat", *[p.shape for p in parts])
    sizes = [p.value.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        def vjp(g):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            return g[tuple(sl)]
        return vjp

    return Var(out, tuple(parts), tuple(make_vjp(i) for i in range(len(parts))))


def reshape(a, shape):
    a = _as_var(a)
    if int(np.prod(a.value.shape)) != int(np.prod(shape)):
        raise ShapeError("reshape", a.shape, tuple(shape))
    return Var(a.value.reshape(shape), (a,), (lambda g: g.reshape(a.value.shape),))


def flatten(a):
    a = _as_var(a)
    return reshape(a, (int(np.prod(a.value.shape)),))


def reduce_sum(a, axis=None, keepdims=False):
    a = _as_var(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        gm = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gm, a.value.shape).copy()

    return Var(out, (a,), (vjp,))


def reduce_mean(a, axis=None, keepdims=False):
    a = _as_var(a)
    n = a.value.size if axis is None else a.value.shape[axis]
    return mul(reduce_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def scaled_dot(a, b):
    """dot(a, b) / sqrt(len(a)) for 1-D operands."""
    a, b = _as_var(a), _as_var(b)
    if a.value.shape != b.value.shape or a.value.ndim != 1:
        raise ShapeError("scaled_dot", a.shape, b.shape)
    return mul(reduce_sum(mul(a, b)), 1.0 / np.sqrt(a.value.shape[0]))


# ---------------------------------------------------------------------------
# derived helpers (compositions of the primitives above)


def neg(a):
    return mul(a, -1.0)


def sub(a, b):
    return add(a, neg(b))


def square(a):
    return mul(a, a)


def recip_pos(a):
    """1/a for strictly positive a."""
    return exp(neg(log(a)))


def sqrt_pos(a):
    """sqrt(a) for strictly positive a."""
    return exp(mul(log(a), 0.5))


def pow_pos(a, p):
    """a**p for strictly positive a and constant p."""
    return exp(mul(log(a), float(p)))


def abs_via_relu(a):
    return add(relu(a), relu(neg(a)))


def softplus(a):
    """log(1 + exp(a)), computed stably as relu(a) + log1p(exp(a - 2 relu(a))).

    The exponent equals -|a|, so the exp never overflows.  Unlike the
    relu + log1p(exp(-|a|)) form, the relu subgradient choice at zero
    cancels here, giving the exact derivative sigmoid(a) everywhere.
    """
    a = _as_var(a)
    r = relu(a)
    return add(r, log(add(exp(sub(a, mul(r, 2.0))), 1.0)))


def log_sigmoid(a):
    return neg(softplus(neg(a)))


# ---------------------------------------------------------------------------
# parameter store and gradient records


class ParamStore:
    """Ordered, named collection of parameter arrays with a flat view."""

    def __init__(self):
        self._arrays = {}

    def add(self, name, value):
        if name in self._arrays:
            raise ValueError(f"duplicate parameter {name!r}")
        self._arrays[name] = tensor(value)
        return self

    def __contains__(self, name):
        return name in self._arrays

    def __getitem__(self, name):
        return self._arrays[name]

    def __setitem__(self, name, value):
        if name not in self._arrays:
            raise KeyError(name)
        arr = tensor(value)
        if arr.shape != self._arrays[name].shape:
            raise ShapeError("param_set", self._arrays[name].shape, arr.shape)
        self._arrays[name] = arr

    def names(self):
        return list(self._arrays)

    def items(self):
        return self._arrays.items()

    @property
    def size(self):
        return sum(a.size for a in self._arrays.values())

    def flat(self):
        if not self._arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self._arrays.values()])

    def assign_flat(self, vec):
        vec = tensor(vec)
        if vec.shape != (self.size,):
            raise ShapeError("assign_flat", (self.size,), vec.shape)
        off = 0
        for name, arr in self._arrays.items():
            self._arrays[name] = vec[off:off + arr.size].reshape(arr.shape)
            off += arr.size
        return self

    def copy(self):
        out = ParamStore()
        for name, arr in self._arrays.items():
            out.add(name, arr.copy())
        return out

    def leaves(self):
        """Fresh leaf Vars for one forward evaluation."""
        return {name: Var(arr) for name, arr in self._arrays.items()}


class GradRecord:
    """Scalar loss plus per-parameter gradients aligned with a ParamStore."""

    def __init__(self, loss, grads):
        self.loss = float(loss)
        self.grads = grads

    def flat(self):
        return np.concatenate([g.ravel() for g in self.grads.values()]) \
            if self.grads else np.zeros(0)


def backprop(root):
    """Return grads of ``root`` (scalar Var) w.r.t. every tape node, by id."""
    if root.value.shape != ():
        raise ShapeError("backprop", root.value.shape)
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    grads = {id(root): np.array(1.0)}
    for node in reversed(order):
        g = grads.get(id(node))
        if g is None:
            continue
        for parent, vjp in zip(node.parents, node.vjps):
            contrib = vjp(g)
            acc = grads.get(id(parent))
            grads[id(parent)] = contrib if acc is None else acc + contrib
    return grads


def forward(block, inputs, params):
    """Evaluate ``block(inputs, param_vars)`` and return the output array."""
    out = block(inputs, params.leaves())
    return np.array(out.value, copy=True)


def backward(block, inputs, params):
    """Evaluate a scalar-valued block and return loss plus parameter grads."""
    leaves = params.leaves()
    out = block(inputs, leaves)
    if out.value.shape != ():
        raise ShapeError("backward", out.value.shape)
    grads = backprop(out)
    rec = {}
    for name, leaf in leaves.items():
        g = grads.get(id(leaf))
        rec[name] = np.zeros_like(leaf.value) if g is None else np.asarray(g)
        if not np.all(np.isfinite(rec[name])):
            raise ValueError(f"non-finite gradient for parameter {name!r}")
    return GradRecord(out.value, rec)


def finite_diff_check(block, inputs, params, h=1e-6, tol=1e-4):
    """Compare analytic gradients against central differences.

    Relative error uses a max(1, |analytic|) denominator so tiny gradients
    are compared absolutely.  Returns a report dict; never raises on a
    mismatch (report-only).
    """
    if not (0 < h <= 1e-3):
        raise ValueError("h must lie in (0, 1e-3]")
    rec = backward(block, inputs, params)

    def loss_at(p):
        return float(forward(block, inputs, p))

    per_param = {}
    worst = 0.0
    for name, arr in params.items():
        analytic = rec.grads[name]
        max_err = 0.0
        flat = arr.ravel()
        for i in range(flat.size):
            probe = params.copy()
            pf = probe[name].ravel().copy()
            pf[i] = flat[i] + h
            probe[name] = pf.reshape(arr.shape)
            up = loss_at(probe)
            pf[i] = flat[i] - h
            probe[name] = pf.reshape(arr.shape)
            dn = loss_at(probe)
            fd = (up - dn) / (2.0 * h)
            an = analytic.ravel()[i]
            err = abs(fd - an) / max(1.0, abs(an))
            max_err = max(max_err, err)
        per_param[name] = max_err
        worst = max(worst, max_err)
    return {"per_param": per_param, "max_rel_err": worst,
            "tol": tol, "passed": worst <= tol}
