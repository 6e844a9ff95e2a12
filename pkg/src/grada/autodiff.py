"""Reverse-mode automatic differentiation on dense float64 numpy arrays.

A ``Tensor`` wraps a numpy array. Every primitive returns a new Tensor and,
when any input requires gradients, records the inputs and a backward closure
on the output node, so the computation graph doubles as the tape. Calling
``backward(root)`` on a scalar root walks the graph once in reverse
topological order and returns a map from tensor id to gradient. backward is
a pure function of the recorded graph: calling it twice yields identical
results.

All primitives validate shapes up front and check their outputs for
NaN/Inf, so a finite forward pass stays finite or fails loudly at the op
that broke it.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import DomainError, ShapeError

_ids = itertools.count()

# Fill value for masked-out attention logits: large enough that exp()
# underflows to exactly 0 after the softmax max-shift, small enough to stay
# finite.
NEG_FILL = -1e30


class Tensor:
    """Dense float64 tensor with an optional gradient tape entry.

    ``op`` is the primitive tag that produced this tensor ("leaf" for
    inputs), ``parents`` the input tensors, and ``_backward`` a closure
    mapping the incoming gradient array to one gradient array per parent.
    """

    __slots__ = ("data", "requires_grad", "tid", "op", "parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.tid = next(_ids)
        self.op = "leaf"
        self.parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(op={self.op!r}, shape={self.shape}, grad={self.requires_grad})"

    # Arithmetic sugar; scalars and arrays are wrapped as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    """Wrap scalars/arrays as constant Tensors; pass Tensors through."""
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{op} produced non-finite values")


def _node(data: np.ndarray, op: str, parents, backward_fn) -> Tensor:
    _finite_or_raise(data, op)
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.op = op
        out.parents = tuple(parents)
        out._backward = backward_fn
    else:
        out.op = op
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient down to ``shape``, undoing numpy broadcasting."""
    if grad.shape == tuple(shape):
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise / broadcasting primitives


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _node(data, "add", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _node(data, "sub", (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data
    return _node(data, "mul", (a, b),
                 lambda g: (_unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("div: denominator contains zero")
    try:
        data = a.data / b.data
    except ValueError:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data
    return _node(data, "div", (a, b),
                 lambda g: (_unbroadcast(g / bd, a.shape),
                            _unbroadcast(-g * ad / (bd * bd), b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    ad, bd = a.data, b.data
    return _node(ad @ bd, "matmul", (a, b),
                 lambda g: (g @ bd.T, ad.T @ g))


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a 2-d tensor, got shape {a.shape}")
    return _node(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        data = np.exp(a.data)
    return _node(data, "exp", (a,), lambda g: (g * data,))


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: operand contains non-positive values")
    ad = a.data
    return _node(np.log(ad), "log", (a,), lambda g: (g / ad,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    data = np.empty_like(x)
    pos = x >= 0
    data[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    data[~pos] = ex / (1.0 + ex)
    return _node(data, "sigmoid", (a,), lambda g: (g * data * (1.0 - data),))


def softplus(a) -> Tensor:
    """log(1 + exp(x)), computed without overflow."""
    a = as_tensor(a)
    x = a.data
    data = np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    sig = np.empty_like(x)
    pos = x >= 0
    sig[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    sig[~pos] = ex / (1.0 + ex)
    return _node(data, "softplus", (a,), lambda g: (g * sig,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(np.where(mask, a.data, 0.0), "relu", (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2) -> Tensor:
    a = as_tensor(a)
    factor = np.where(a.data > 0, 1.0, float(slope))
    return _node(a.data * factor, "leaky_relu", (a,), lambda g: (g * factor,))


def elu(a, alpha=1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    neg_part = alpha * (np.exp(np.minimum(x, 0.0)) - 1.0)
    data = np.where(x > 0, x, neg_part)
    deriv = np.where(x > 0, 1.0, neg_part + alpha)
    return _node(data, "elu", (a,), lambda g: (g * deriv,))


def softmax(a, axis) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * data).sum(axis=axis, keepdims=True)
        return (data * (g - inner),)

    return _node(data, "softmax", (a,), bw)


def logsumexp(a, axis) -> Tensor:
    a = as_tensor(a)
    m = a.data.max(axis=axis, keepdims=True)
    e = np.exp(a.data - m)
    s = e.sum(axis=axis, keepdims=True)
    data = np.squeeze(m + np.log(s), axis=axis)
    soft = e / s

    def bw(g):
        return (np.expand_dims(g, axis) * soft,)

    return _node(data, "logsumexp", (a,), bw)


def tsum(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _node(np.sum(a.data, axis=axis), "sum", (a,), bw)


def tmean(a, axis=None) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    count = a.size if axis is None else shape[axis]
    if count == 0:
        raise ShapeError("mean: cannot reduce an empty tensor")

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, shape).copy(),)

    return _node(np.mean(a.data, axis=axis), "mean", (a,), bw)


def concat(tensors, axis=0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ShapeError("concat: need at least one tensor")
    data = np.concatenate([t.data for t in ts], axis=axis)
    sizes = [t.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _node(data, "concat", ts, bw)


def slice_rows(a, start, stop) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 1 or not (0 <= start <= stop <= a.shape[0]):
        raise ShapeError(f"slice_rows: range [{start}, {stop}) invalid for shape {a.shape}")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[start:stop] = g
        return (full,)

    return _node(a.data[start:stop].copy(), "slice_rows", (a,), bw)


def masked_fill(a, mask, value) -> Tensor:
    """Replace entries where ``mask`` is True by ``value`` (constant)."""
    a = as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_fill: mask shape {mask.shape} != tensor shape {a.shape}")
    keep = ~mask
    return _node(np.where(mask, float(value), a.data), "masked_fill", (a,),
                 lambda g: (g * keep,))


def clamp(a, lo, hi) -> Tensor:
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _node(np.clip(a.data, lo, hi), "clamp", (a,), lambda g: (g * inside,))


def leaky_masked_softmax(scores, keep_mask, slope=0.2) -> Tensor:
    """Row softmax of leaky-relu(scores) restricted to keep_mask.

    Fused attention kernel equivalent to
    softmax(masked_fill(leaky_relu(scores), ~keep, NEG_FILL), axis=1):
    one tape node instead of three for the quadratic-size matrices.
    Masked-out entries come out exactly zero.
    """
    scores = as_tensor(scores)
    keep = np.asarray(keep_mask, dtype=bool)
    if keep.shape != scores.shape:
        raise ShapeError(
            f"leaky_masked_softmax: mask shape {keep.shape} != scores shape {scores.shape}")
    factor = np.where(scores.data > 0, 1.0, float(slope))
    act = np.where(keep, scores.data * factor, NEG_FILL)
    shifted = act - act.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bw(g):
        inner = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - inner) * factor,)

    return _node(out, "leaky_masked_softmax", (scores,), bw)


def grad_reverse(a, lambda_grl) -> Tensor:
    """Identity forward; backward multiplies the gradient by -lambda_grl."""
    a = as_tensor(a)
    lam = float(lambda_grl)
    if lam < 0:
        raise DomainError("grad_reverse: lambda must be >= 0")
    return _node(a.data.copy(), "grad_reverse", (a,), lambda g: (-lam * g,))


# ---------------------------------------------------------------------------
# singular value decomposition (one-sided Jacobi) and the nuclear norm

_SVD_TRUNC = 1e-12


def _jacobi_svd(a: np.ndarray):
    """Compact SVD of a small dense matrix via one-sided Jacobi rotations.

    Returns (U, s, V) with s descending and singular values below
    1e-12 * max(1, s_max) dropped, so U and V keep orthonormal columns even
    for rank-deficient input.
    """
    a = np.asarray(a, dtype=np.float64)
    m, n = a.shape
    if m < n:
        v, s, u = _jacobi_svd(a.T)
        return u, s, v
    w = a.copy()
    v = np.eye(n)
    for _ in range(100):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = w[:, p]
                wq = w[:, q]
                alpha = wp @ wp
                beta = wq @ wq
                gamma = wp @ wq
                if gamma == 0.0 or alpha == 0.0 or beta == 0.0:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s_ = c * t
                w[:, p], w[:, q] = c * wp - s_ * wq, s_ * wp + c * wq
                v[:, p], v[:, q] = c * v[:, p] - s_ * v[:, q], s_ * v[:, p] + c * v[:, q]
        if off < 1e-14:
            break
    norms = np.sqrt((w * w).sum(axis=0))
    order = np.argsort(-norms)
    norms = norms[order]
    w = w[:, order]
    v = v[:, order]
    keep = norms > _SVD_TRUNC * max(1.0, norms[0] if norms.size else 0.0)
    s = norms[keep]
    u = w[:, keep] / s if s.size else np.zeros((m, 0))
    return u, s, v[:, keep]


def svd(m):
    """Compact SVD: returns (U, S, V) Tensors with M = U @ diag(S) @ V.T.

    Not differentiable; see ``nuclear_norm`` for the gradient path through
    the sum of singular values.
    """
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeError(f"svd: expected a 2-d tensor, got shape {m.shape}")
    if not np.all(np.isfinite(m.data)):
        raise DomainError("svd: input contains non-finite entries")
    u, s, v = _jacobi_svd(m.data)
    return Tensor(u), Tensor(s), Tensor(v)


def nuclear_norm(m) -> Tensor:
    """Sum of singular values; gradient is the subgradient U @ V.T."""
    m = as_tensor(m)
    if m.ndim != 2:
        raise ShapeError(f"nuclear_norm: expected a 2-d tensor, got shape {m.shape}")
    if not np.all(np.isfinite(m.data)):
        raise DomainError("nuclear_norm: input contains non-finite entries")
    u, s, v = _jacobi_svd(m.data)
    uvt = u @ v.T

    def bw(g):
        return (g * uvt,)

    return _node(np.asarray(s.sum()), "nuclear_norm", (m,), bw)


# ---------------------------------------------------------------------------
# tape replay

PRIMITIVES = {
    "add": add,
    "sub": sub,
    "neg": neg,
    "mul": mul,
    "div": div,
    "matmul": matmul,
    "transpose": transpose,
    "exp": exp,
    "log": log,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "elu": elu,
    "softmax": softmax,
    "logsumexp": logsumexp,
    "sum": tsum,
    "mean": tmean,
    "concat": concat,
    "slice_rows": slice_rows,
    "masked_fill": masked_fill,
    "clamp": clamp,
    "leaky_masked_softmax": leaky_masked_softmax,
    "nuclear_norm": nuclear_norm,
    "grad_reverse": grad_reverse,
}


def apply_primitive(kind, *inputs, **kwargs) -> Tensor:
    """Dispatch a primitive by tag. Unknown tags raise ShapeError-free errors."""
    try:
        fn = PRIMITIVES[kind]
    except KeyError:
        raise DomainError(f"unknown primitive kind {kind!r}") from None
    return fn(*inputs, **kwargs)


def _topo_order(root: Tensor):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if node.tid in seen:
            continue
        seen.add(node.tid)
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and p.tid not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor):
    """Gradients of a scalar root with respect to every tensor on its tape.

    Returns a map from tensor id to gradient Tensor; tensors that do not
    require gradients (or are unreachable from the root) are absent.
    """
    if root.shape != ():
        raise ShapeError(f"backward: root must be a scalar, got shape {root.shape}")
    if not root.requires_grad:
        return {}
    order = _topo_order(root)
    grads = {root.tid: np.ones(())}
    for node in reversed(order):
        g = grads.get(node.tid)
        if g is None or node._backward is None:
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node.parents, parent_grads):
            if not parent.requires_grad:
                continue
            acc = grads.get(parent.tid)
            grads[parent.tid] = np.asarray(pg) if acc is None else acc + pg
    return {tid: Tensor(g) for tid, g in grads.items()}
