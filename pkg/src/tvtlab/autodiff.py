"""Minimal reverse-mode differentiation on numpy arrays.

Only the primitives the agent stack needs: elementwise arithmetic,
matrix-vector products, concatenation/slicing, the usual activations,
softmax/log-softmax, stable cross-entropies and cosine similarity.
Graphs are built dynamically; ``backward`` walks the tape in reverse
topological order, visiting each node exactly once and accumulating
gradients additively into every contributing node.

Reductions (sums, softmax normalizers) accumulate in float64 before
casting back to the working dtype, so float32 graphs keep stable sums.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when an op receives operands with incompatible shapes."""


@contextmanager
def no_grad():
    """Disable graph construction inside the block (evaluation mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """A numpy array plus the bookkeeping needed for reverse mode.

    ``parents`` and ``backward_fn`` encode one primitive application; a
    tensor with no parents is a leaf (parameter, input, or constant).
    ``requires_grad`` marks leaves that want gradient accumulation and
    propagates through ops so dead branches are never traversed.
    """

    __slots__ = ("data", "grad", "parents", "backward_fn", "requires_grad", "name")

    def __init__(self, data, requires_grad=False, parents=(), backward_fn=None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        head = f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}"
        if self.name:
            head += f", name={self.name!r}"
        return head + ")"

    # Operator sugar for the handful of places expressions read better.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale_const(self, -1.0)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else np.float32
    return Tensor(np.asarray(x, dtype=dtype))


def _node(data, parents, backward_fn, name=None) -> Tensor:
    """Create an op output; drop the tape when grads are off or unused."""
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        return Tensor(data, parents=parents, backward_fn=backward_fn, name=name)
    return Tensor(data, name=name)


def _check(cond, op, msg):
    if not cond:
        raise ShapeError(f"{op}: {msg}")


def backward(output: Tensor, seed=None) -> None:
    """Reverse pass from ``output``, accumulating into .grad of every node.

    Iterative topological order (graphs span whole episodes, so no
    recursion). Calling this on a graph-free tensor is rejected: there
    is nothing recorded to traverse.
    """
    if output.backward_fn is None and not output.parents:
        if output.requires_grad:
            output.accumulate(np.ones_like(output.data) if seed is None else seed)
            return
        raise RuntimeError("backward: tensor has no recorded computation")
    if seed is None:
        seed = np.ones_like(output.data)
    # Iterative post-order DFS for the topological order.
    order = []
    visited = set()
    stack = [(output, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in visited and (p.parents or p.requires_grad):
                stack.append((p, False))
    output.accumulate(seed)
    for node in reversed(order):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)


# ---------------------------------------------------------------------------
# primitives


def add(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a)
    _check(a.shape == b.shape or a.shape == () or b.shape == (), "add",
           f"operand shapes {a.shape} vs {b.shape}")
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g if a.shape == out_data.shape else np.sum(g, dtype=np.float64))
        if b.requires_grad:
            b.accumulate(g if b.shape == out_data.shape else np.sum(g, dtype=np.float64))

    return _node(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a)
    _check(a.shape == b.shape or a.shape == () or b.shape == (), "sub",
           f"operand shapes {a.shape} vs {b.shape}")
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g if a.shape == out_data.shape else np.sum(g, dtype=np.float64))
        if b.requires_grad:
            b.accumulate(-g if b.shape == out_data.shape else -np.sum(g, dtype=np.float64))

    return _node(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; either operand may be a scalar (shape ())."""
    b = as_tensor(b, a)
    _check(a.shape == b.shape or a.shape == () or b.shape == (), "mul",
           f"operand shapes {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad:
            ga = g * b.data
            a.accumulate(ga if a.shape == out_data.shape else np.sum(ga, dtype=np.float64))
        if b.requires_grad:
            gb = g * a.data
            b.accumulate(gb if b.shape == out_data.shape else np.sum(gb, dtype=np.float64))

    return _node(out_data, (a, b), bwd, "mul")


def div(a: Tensor, b) -> Tensor:
    b = as_tensor(b, a)
    _check(a.shape == b.shape or a.shape == () or b.shape == (), "div",
           f"operand shapes {a.shape} vs {b.shape}")
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad:
            ga = g / b.data
            a.accumulate(ga if a.shape == out_data.shape else np.sum(ga, dtype=np.float64))
        if b.requires_grad:
            gb = -g * a.data / (b.data * b.data)
            b.accumulate(gb if b.shape == out_data.shape else np.sum(gb, dtype=np.float64))

    return _node(out_data, (a, b), bwd, "div")


def scale_const(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * c)

    return _node(out_data, (a,), bwd, "scale_const")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product in the (2D,1D), (1D,2D) and (2D,2D) flavors."""
    _check(a.data.ndim in (1, 2) and b.data.ndim in (1, 2), "matmul",
           f"ranks {a.data.ndim} and {b.data.ndim} unsupported")
    ka = a.shape[-1] if a.data.ndim == 2 else a.shape[0]
    kb = b.shape[0]
    _check(ka == kb, "matmul", f"inner dims {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.data.ndim == 2 and b.data.ndim == 1:
            if a.requires_grad:
                a.accumulate(np.outer(g, b.data))
            if b.requires_grad:
                b.accumulate(a.data.T @ g)
        elif a.data.ndim == 1 and b.data.ndim == 2:
            if a.requires_grad:
                a.accumulate(b.data @ g)
            if b.requires_grad:
                b.accumulate(np.outer(a.data, g))
        else:
            if a.requires_grad:
                a.accumulate(g @ b.data.T)
            if b.requires_grad:
                b.accumulate(a.data.T @ g)

    return _node(out_data, (a, b), bwd, "matmul")


def concat(parts: list[Tensor]) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    _check(all(p.data.ndim == 1 for p in parts), "concat", "1-D operands only")
    sizes = [p.shape[0] for p in parts]
    out_data = np.concatenate([p.data for p in parts])
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        for p, lo, hi in zip(parts, offs[:-1], offs[1:]):
            if p.requires_grad:
                p.accumulate(g[lo:hi])

    return _node(out_data, tuple(parts), bwd, "concat")


def stack_rows(rows: list[Tensor]) -> Tensor:
    rows = [as_tensor(r) for r in rows]
    _check(all(r.data.ndim == 1 for r in rows), "stack_rows", "1-D rows only")
    _check(len({r.shape[0] for r in rows}) == 1, "stack_rows", "row lengths differ")
    out_data = np.stack([r.data for r in rows])

    def bwd(g):
        for i, r in enumerate(rows):
            if r.requires_grad:
                r.accumulate(g[i])

    return _node(out_data, tuple(rows), bwd, "stack_rows")


def slice1d(a: Tensor, start: int, stop: int) -> Tensor:
    _check(a.data.ndim == 1, "slice1d", "1-D operand only")
    _check(0 <= start <= stop <= a.shape[0], "slice1d",
           f"range [{start}:{stop}] outside length {a.shape[0]}")
    out_data = a.data[start:stop]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop] = g
            a.accumulate(full)

    return _node(out_data, (a,), bwd, "slice1d")


def gather(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    _check(a.data.ndim == 1, "gather", "1-D operand only")
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate(full)

    return _node(out_data, (a,), bwd, "gather")


def gather_rows(a: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    _check(a.data.ndim == 2, "gather_rows", "2-D operand only")
    out_data = a.data[idx]

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a.accumulate(full)

    return _node(out_data, (a,), bwd, "gather_rows")


def tsum(a: Tensor) -> Tensor:
    out_data = np.asarray(np.sum(a.data, dtype=np.float64)).astype(a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, g))

    return _node(out_data, (a,), bwd, "sum")


def sum_rows(a: Tensor) -> Tensor:
    """Row-wise sum of a 2-D tensor -> 1-D."""
    _check(a.data.ndim == 2, "sum_rows", "2-D operand only")
    out_data = np.sum(a.data, axis=1, dtype=np.float64).astype(a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(np.repeat(g[:, None], a.shape[1], axis=1))

    return _node(out_data, (a,), bwd, "sum_rows")


def dot(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape == b.shape and a.data.ndim == 1, "dot",
           f"operand shapes {a.shape} vs {b.shape}")
    out_data = np.asarray(np.dot(a.data.astype(np.float64), b.data.astype(np.float64))).astype(a.dtype)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _node(out_data, (a, b), bwd, "dot")


def square(a: Tensor) -> Tensor:
    return mul(a, a)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * 0.5 / np.maximum(out_data, np.finfo(out_data.dtype).tiny))

    return _node(out_data, (a,), bwd, "sqrt")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * out_data)

    return _node(out_data, (a,), bwd, "exp")


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    return _node(out_data, (a,), bwd, "log")


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * (1.0 - out_data * out_data))

    return _node(out_data, (a,), bwd, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    out_data = _sigmoid(a.data)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * out_data * (1.0 - out_data))

    return _node(out_data, (a,), bwd, "sigmoid")


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably; output is strictly positive."""
    x = a.data
    out_data = np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x)))

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * _sigmoid(x))

    return _node(out_data, (a,), bwd, "softplus")


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0)

    def bwd(g):
        if a.requires_grad:
            a.accumulate(g * (a.data > 0))

    return _node(out_data, (a,), bwd, "relu")


def softmax(a: Tensor) -> Tensor:
    """Max-subtracted softmax over a 1-D tensor; outputs sum to 1."""
    _check(a.data.ndim == 1, "softmax", "1-D operand only")
    shifted = a.data.astype(np.float64) - np.max(a.data)
    e = np.exp(shifted)
    out64 = e / np.sum(e)
    out_data = out64.astype(a.dtype)

    def bwd(g):
        if a.requires_grad:
            gd = g.astype(np.float64)
            a.accumulate(((gd - np.dot(gd, out64)) * out64).astype(a.dtype))

    return _node(out_data, (a,), bwd, "softmax")


def log_softmax(a: Tensor) -> Tensor:
    _check(a.data.ndim == 1, "log_softmax", "1-D operand only")
    shifted = a.data.astype(np.float64) - np.max(a.data)
    lse = np.log(np.sum(np.exp(shifted)))
    out64 = shifted - lse
    out_data = out64.astype(a.dtype)
    probs = np.exp(out64)

    def bwd(g):
        if a.requires_grad:
            gd = g.astype(np.float64)
            a.accumulate((gd - probs * np.sum(gd)).astype(a.dtype))

    return _node(out_data, (a,), bwd, "log_softmax")


def stop_gradient(a: Tensor) -> Tensor:
    return Tensor(a.data, name="stop_gradient")


def cosine_similarity(u: Tensor, v: Tensor, eps: float = 1e-6) -> Tensor:
    """cos(u, v) with an eps-regularized denominator.

    The eps keeps the value defined (and equal to 0) when either vector
    is zero, which is the convention for unwritten memory rows.
    """
    _check(u.shape == v.shape and u.data.ndim == 1, "cosine_similarity",
           f"operand shapes {u.shape} vs {v.shape}")
    nu = sqrt(tsum(square(u)))
    nv = sqrt(tsum(square(v)))
    return div(dot(u, v), add(mul(nu, nv), Tensor(np.asarray(eps, dtype=u.dtype))))


def bernoulli_ce_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Summed Bernoulli cross-entropy from logits, numerically stable.

    Forward uses max(l,0) - l*t + log(1+exp(-|l|)); gradient is the
    familiar sigmoid(l) - t.
    """
    t = np.asarray(targets, dtype=logits.dtype)
    _check(t.shape == logits.shape, "bernoulli_ce_logits",
           f"target shape {t.shape} vs logits {logits.shape}")
    x = logits.data
    per = np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))
    out_data = np.asarray(np.sum(per, dtype=np.float64)).astype(logits.dtype)

    def bwd(g):
        if logits.requires_grad:
            logits.accumulate(g * (_sigmoid(x) - t))

    return _node(out_data, (logits,), bwd, "bernoulli_ce_logits")


def softmax_ce_logits(logits: Tensor, target_onehot: np.ndarray) -> Tensor:
    """-sum(target * log_softmax(logits)); an all-zero target gives 0."""
    t = np.asarray(target_onehot, dtype=np.float64)
    _check(t.shape == logits.shape, "softmax_ce_logits",
           f"target shape {t.shape} vs logits {logits.shape}")
    shifted = logits.data.astype(np.float64) - np.max(logits.data)
    lse = np.log(np.sum(np.exp(shifted)))
    logp = shifted - lse
    out_data = np.asarray(-np.sum(t * logp)).astype(logits.dtype)
    probs = np.exp(logp)
    tmass = np.sum(t)

    def bwd(g):
        if logits.requires_grad:
            logits.accumulate((g * (tmass * probs - t)).astype(logits.dtype))

    return _node(out_data, (logits,), bwd, "softmax_ce_logits")


def entropy(logits: Tensor) -> Tensor:
    """Shannon entropy of softmax(logits), in nats."""
    p = softmax(logits)
    lp = log_softmax(logits)
    return scale_const(tsum(mul(p, lp)), -1.0)
