"""Dense float64 tensors with a small reverse-mode differentiation engine.

Every op returns a new :class:`Tensor` that remembers its parents and a
closure pushing the output adjoint back to them. ``backward`` walks the graph
in reverse topological order. Gradients accumulate; call :func:`zero_grads`
between optimizer steps.

Broadcasting is limited to identical shapes and a length-``n`` vector applied
over every row of an ``m x n`` matrix.
"""

import itertools
import math

import numpy as np

from magfuse import _kernels
from magfuse.errors import NumericError, ShapeError

_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "node_id", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.op = op
        self.node_id = next(_ids)
        self._parents = _parents
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(arr, op):
    # one reduction: NaN/Inf anywhere (or an overflowing total) poisons the sum
    if not math.isfinite(arr.sum()):
        raise NumericError(f"{op} produced non-finite values")
    return arr


def _make(data, parents, op, backward_fn):
    _check_finite(data, op)
    req = any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=req, _parents=parents if req else (), op=op)
    if req:
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=np.float64, copy=True).reshape(t.data.shape)
    else:
        t.grad += g


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), "matmul", bw)


def transpose(x):
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {x.shape}")

    def bw(g):
        _accumulate(x, g.T)

    return _make(x.data.T.copy(), (x,), "transpose", bw)


def block_scores(q, k, width):
    """Per-block q k^T for packed rows.

    ``q`` and ``k`` are ``(B * width) x d``; row ``b * width + i`` of the result
    holds the dot products of query ``i`` with the ``width`` keys of block ``b``.
    """
    if q.shape != k.shape or q.data.ndim != 2 or q.shape[0] % width:
        raise ShapeError(f"block_scores shapes {q.shape}, {k.shape} with width {width}")
    B, d = q.shape[0] // width, q.shape[1]
    q3, k3 = q.data.reshape(B, width, d), k.data.reshape(B, width, d)
    out = np.matmul(q3, k3.transpose(0, 2, 1)).reshape(B * width, width)

    def bw(g):
        g3 = g.reshape(B, width, width)
        if q.requires_grad:
            _accumulate(q, np.matmul(g3, k3).reshape(B * width, d))
        if k.requires_grad:
            _accumulate(k, np.matmul(g3.transpose(0, 2, 1), q3).reshape(B * width, d))

    return _make(out, (q, k), "block_scores", bw)


def block_mix(w, v, width):
    """Per-block weighted sums: row ``b * width + i`` is sum_j w[.., j] * v[b * width + j]."""
    if w.data.ndim != 2 or w.shape[1] != width or w.shape[0] != v.shape[0] or v.shape[0] % width:
        raise ShapeError(f"block_mix shapes {w.shape}, {v.shape} with width {width}")
    B, d = v.shape[0] // width, v.shape[1]
    w3, v3 = w.data.reshape(B, width, width), v.data.reshape(B, width, d)
    out = np.matmul(w3, v3).reshape(B * width, d)

    def bw(g):
        g3 = g.reshape(B, width, d)
        if w.requires_grad:
            _accumulate(w, np.matmul(g3, v3.transpose(0, 2, 1)).reshape(B * width, width))
        if v.requires_grad:
            _accumulate(v, np.matmul(w3.transpose(0, 2, 1), g3).reshape(B * width, d))

    return _make(out, (w, v), "block_mix", bw)


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def _broadcast_kind(a, b, op):
    if a.shape == b.shape:
        return "same"
    if a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]:
        return "row"
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(b, g, kind):
    return g.sum(axis=0) if kind == "row" else g


def add(a, b):
    kind = _broadcast_kind(a, b, "add")

    def bw(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, _reduce_to(b, g, kind))

    return _make(a.data + b.data, (a, b), "add", bw)


def sub(a, b):
    kind = _broadcast_kind(a, b, "sub")

    def bw(g):
        _accumulate(a, g)
        if b.requires_grad:
            _accumulate(b, -_reduce_to(b, g, kind))

    return _make(a.data - b.data, (a, b), "sub", bw)


def mul(a, b):
    kind = _broadcast_kind(a, b, "mul")

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g * b.data)
        if b.requires_grad:
            _accumulate(b, _reduce_to(b, g * a.data, kind))

    return _make(a.data * b.data, (a, b), "mul", bw)


def div(a, b):
    kind = _broadcast_kind(a, b, "div")
    if np.any(b.data == 0):
        raise NumericError("div: division by zero")
    out_data = a.data / b.data

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g / b.data)
        if b.requires_grad:
            _accumulate(b, _reduce_to(b, -g * out_data / b.data, kind))

    return _make(out_data, (a, b), "div", bw)


def scale(x, c):
    c = float(c)

    def bw(g):
        _accumulate(x, g * c)

    return _make(x.data * c, (x,), "scale", bw)


def add_scalar(x, c):
    def bw(g):
        _accumulate(x, g)

    return _make(x.data + float(c), (x,), "add_scalar", bw)


def relu(x):
    pos = x.data > 0

    def bw(g):
        _accumulate(x, g * pos)

    return _make(np.maximum(x.data, 0.0), (x,), "relu", bw)


def tanh(x):
    y = np.tanh(x.data)

    def bw(g):
        _accumulate(x, g * (1.0 - y * y))

    return _make(y, (x,), "tanh", bw)


def softplus(x):
    y = np.logaddexp(0.0, x.data)

    def bw(g):
        _accumulate(x, g / (1.0 + np.exp(-x.data)))

    return _make(y, (x,), "softplus", bw)


def absolute(x):
    """|x| with subgradient 0 at 0."""

    def bw(g):
        _accumulate(x, g * np.sign(x.data))

    return _make(np.abs(x.data), (x,), "abs", bw)


def square(x):
    def bw(g):
        _accumulate(x, 2.0 * g * x.data)

    return _make(x.data * x.data, (x,), "square", bw)


def minimum_const(x, c):
    """min(x, c) elementwise; the adjoint is 0 wherever the bound binds."""
    keep = x.data < c

    def bw(g):
        _accumulate(x, g * keep)

    return _make(np.where(keep, x.data, float(c)), (x,), "minimum_const", bw)


# ---------------------------------------------------------------------------
# reductions and reshaping
# ---------------------------------------------------------------------------


def sum_all(x):
    def bw(g):
        _accumulate(x, np.broadcast_to(g.reshape(()), x.shape))

    return _make(np.array([x.data.sum()]), (x,), "sum", bw)


def mean_all(x):
    n = x.data.size

    def bw(g):
        _accumulate(x, np.broadcast_to(g.reshape(()) / n, x.shape))

    return _make(np.array([x.data.mean()]), (x,), "mean", bw)


def row_norms(x):
    """Euclidean norm of each row of an m x n matrix -> vector of length m."""
    if x.data.ndim != 2:
        raise ShapeError(f"row_norms needs a matrix, got {x.shape}")
    n = np.sqrt((x.data * x.data).sum(axis=1))

    def bw(g):
        safe = np.where(n > 0, n, 1.0)
        _accumulate(x, np.where(n[:, None] > 0, x.data * (g / safe)[:, None], 0.0))

    return _make(n, (x,), "row_norms", bw)


def scale_rows(x, s):
    """Multiply row i of matrix x by s[i]."""
    if x.data.ndim != 2 or s.data.ndim != 1 or s.shape[0] != x.shape[0]:
        raise ShapeError(f"scale_rows shape mismatch: {x.shape} and {s.shape}")

    def bw(g):
        if x.requires_grad:
            _accumulate(x, g * s.data[:, None])
        if s.requires_grad:
            _accumulate(s, (g * x.data).sum(axis=1))

    return _make(x.data * s.data[:, None], (x, s), "scale_rows", bw)


def concat_last(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_last shape mismatch: {a.shape} and {b.shape}")
    k = a.shape[1]

    def bw(g):
        _accumulate(a, g[:, :k])
        _accumulate(b, g[:, k:])

    return _make(np.concatenate([a.data, b.data], axis=1), (a, b), "concat_last", bw)


def concat_cols(parts):
    widths = [p.shape[1] for p in parts]
    edges = np.cumsum([0] + widths)

    def bw(g):
        for p, lo, hi in zip(parts, edges[:-1], edges[1:]):
            _accumulate(p, g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), tuple(parts), "concat_cols", bw)


def slice_cols(x, start, stop):
    if x.data.ndim != 2 or not 0 <= start < stop <= x.shape[1]:
        raise ShapeError(f"slice_cols [{start}:{stop}] invalid for shape {x.shape}")

    def bw(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        _accumulate(x, full)

    return _make(x.data[:, start:stop].copy(), (x,), "slice_cols", bw)


def reshape(x, shape):
    shape = tuple(shape)

    def bw(g):
        _accumulate(x, g.reshape(x.shape))

    return _make(x.data.reshape(shape).copy(), (x,), "reshape", bw)


def take_rows(w, ids):
    """Embedding lookup: rows of w selected by integer ids."""
    ids = np.asarray(ids, dtype=np.int64)
    if w.data.ndim != 2:
        raise ShapeError(f"take_rows needs a matrix, got {w.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= w.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {w.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(w.data)
        np.add.at(full, ids, g)
        _accumulate(w, full)

    return _make(w.data[ids], (w,), "take_rows", bw)


def gather(v, index):
    """out[...] = v[index[...]] for a 1-d v; adjoint scatter-adds."""
    index = np.asarray(index, dtype=np.int64)
    if v.data.ndim != 1:
        raise ShapeError(f"gather needs a vector, got {v.shape}")

    def bw(g):
        full = np.zeros_like(v.data)
        np.add.at(full, index.reshape(-1), g.reshape(-1))
        _accumulate(v, full)

    return _make(v.data[index], (v,), "gather", bw)


# ---------------------------------------------------------------------------
# normalisation, attention weights, dropout
# ---------------------------------------------------------------------------


def softmax_rows(x, mask=None):
    """Row-wise softmax. Entries where ``mask`` is False get weight exactly 0."""
    if x.data.ndim != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows needs an m x n matrix with n >= 1, got {x.shape}")
    if not np.all(np.isfinite(x.data)):
        raise NumericError("softmax_rows: non-finite input")
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != x.shape:
            raise ShapeError(f"softmax mask shape {mask.shape} != {x.shape}")
        if not mask.any(axis=1).all():
            raise ShapeError("softmax_rows: a row is fully masked")
    y = _kernels.KERNELS["softmax_rows"](x.data, mask)

    def bw(g):
        _accumulate(x, _kernels.KERNELS["softmax_rows_bwd"](y, g))

    return _make(y, (x,), "softmax_rows", bw)


def layer_norm(x, gain, bias, eps=1e-5):
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm shapes: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    out, xhat, rstd = _kernels.KERNELS["layer_norm"](x.data, gain.data, bias.data, eps)

    def bw(g):
        dx, dgain, dbias = _kernels.KERNELS["layer_norm_bwd"](g, xhat, rstd, gain.data)
        _accumulate(x, dx)
        _accumulate(gain, dgain)
        _accumulate(bias, dbias)

    return _make(out, (x, gain, bias), "layer_norm", bw)


def dropout(x, p, rng, training):
    """Inverted dropout; identity when ``training`` is false."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        _accumulate(x, g * keep)

    return _make(x.data * keep, (x,), "dropout", bw)


def l2_norm(x):
    """Euclidean norm of all entries, as a plain float (not differentiated)."""
    return float(np.sqrt(np.sum(as_tensor(x).data ** 2)))


# ---------------------------------------------------------------------------
# backward pass
# ---------------------------------------------------------------------------


def topological_order(root):
    """Nodes reachable from ``root`` with every node after all of its inputs."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.node_id in seen:
            continue
        seen.add(node.node_id)
        stack.append((node, True))
        for p in node._parents:
            if p.node_id not in seen:
                stack.append((p, False))
    return order


def backward(loss):
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = topological_order(loss)
    pending = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = pending.pop(id(node), None)
        if g is None:
            continue
        _accumulate(node, g)
        if node._backward is None:
            continue
        # parents receive this node's adjoint through the closure; route
        # intermediate results through ``pending`` instead of .grad so that
        # accumulated leaf grads from earlier calls are not re-propagated
        saved = [(p, p.grad) for p in node._parents]
        for p, _ in saved:
            p.grad = None
        node._backward(g)
        for p, old in saved:
            if p.grad is not None:
                prev = pending.get(id(p))
                pending[id(p)] = p.grad if prev is None else prev + p.grad
            p.grad = old


def zero_grads(tensors):
    for t in tensors:
        t.grad = None
