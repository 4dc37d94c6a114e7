"""A small dense reverse-mode autodiff engine on float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape`. Outside a
tape they simply compute values, which is what inference uses::

    with Tape() as tape:
        loss = cross_entropy(logits(x), y)
        tape.backward(loss)
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
import scipy.sparse as sp

_state = threading.local()


class ShapeError(ValueError):
    pass


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


def _tape_stack():
    if not hasattr(_state, "tapes"):
        _state.tapes = []
    return _state.tapes


@contextmanager
def no_tape():
    """Suspend recording (values only) inside the block."""
    stack = _tape_stack()
    saved = stack[:]
    stack.clear()
    try:
        yield
    finally:
        stack[:] = saved


def active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("values", "requires_grad", "grad", "tape_id", "name", "empty")

    def __init__(self, values, requires_grad=False, name=None):
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.ndim > 2:
            raise ShapeError(f"tensors are 1-D or 2-D, got shape {self.values.shape}")
        self.requires_grad = requires_grad
        self.grad = None
        self.tape_id = None
        self.name = name
        self.empty = None

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.values.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.values

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    @property
    def T(self):
        return transpose(self)

    def backward(self):
        tape = active_tape()
        if tape is None:
            raise RuntimeError("backward() needs an active Tape")
        tape.backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of operations; backward replays it in reverse."""

    def __init__(self):
        self.nodes = []  # (out, parents, backward_fn)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc):
        _tape_stack().remove(self)
        return False

    def record(self, out: Tensor, parents, backward_fn):
        out.tape_id = len(self.nodes)
        self.nodes.append((out, parents, backward_fn))

    def clear(self):
        self.nodes.clear()

    def backward(self, loss: Tensor, seed=None):
        if loss.tape_id is None:
            raise RuntimeError("loss was not recorded on this tape")
        for out, parents, _ in self.nodes:
            out.grad = np.zeros_like(out.values)
            for p in parents:
                if p.requires_grad and p.grad is None:
                    p.grad = np.zeros_like(p.values)
        loss.grad = np.ones_like(loss.values) if seed is None else np.asarray(seed, dtype=np.float64)
        for out, parents, backward_fn in reversed(self.nodes[:loss.tape_id + 1]):
            if not out.grad.any():
                continue
            for p, g in zip(parents, backward_fn(out.grad)):
                if g is not None and p.requires_grad:
                    p.grad += g


def _make(values, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    tape = active_tape()
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(values, requires_grad=needs)
    if needs:
        tape.record(out, parents, backward_fn)
    return out


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _check_broadcast(a, b, op):
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}") from None
    for sa, sb in zip(a.shape[::-1], b.shape[::-1]):
        if sa != sb and 1 not in (sa, sb):
            raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# -- elementwise ---------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.values + b.values, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def neg(a) -> Tensor:
    return _make(-a.values, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    return _make(a.values * c, (a,), lambda g: (g * c,))


def mul(a, b) -> Tensor:
    """Elementwise product with row/column-vector broadcasting."""
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.values * b.values, (a, b),
                 lambda g: (_unbroadcast(g * b.values, a.shape), _unbroadcast(g * a.values, b.shape)))


elementwise_mul = mul


def leaky_relu(a, slope=0.2) -> Tensor:
    pos = a.values > 0
    return _make(np.where(pos, a.values, slope * a.values), (a,),
                 lambda g: (np.where(pos, g, slope * g),))


def exp(a) -> Tensor:
    out = np.exp(a.values)
    return _make(out, (a,), lambda g: (g * out,))


def dropout(a, rate, rng) -> Tensor:
    if rate <= 0:
        return a
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)
    return _make(a.values * keep, (a,), lambda g: (g * keep,))


def stop_gradient(a) -> Tensor:
    return Tensor(a.values.copy())


# -- linear algebra / shape ----------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.values @ b.values, (a, b),
                 lambda g: (g @ b.values.T, a.values.T @ g))


def transpose(a) -> Tensor:
    return _make(a.values.T, (a,), lambda g: (g.T,))


def concat(tensors, axis=1) -> Tensor:
    """Join along ``axis``; the default joins rows side by side ([a || b])."""
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.values for t in tensors], axis=axis)
    except ValueError as e:
        raise ShapeError(f"concat: {e}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(out, tensors, backward)


def concat_rows(tensors) -> Tensor:
    return concat(tensors, axis=1)


def index(a, key) -> Tensor:
    out = a.values[key]

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, key, g)
        return (full,)

    return _make(out, (a,), backward)


def _segment_matrix(idx, n):
    """Sparse n x len(idx) matrix with a one in (idx[e], e)."""
    m = len(idx)
    return sp.csr_matrix((np.ones(m), (idx, np.arange(m))), shape=(n, m))


def gather_rows(a, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if a.values.ndim != 2:
        raise ShapeError("gather_rows needs a 2-D tensor")
    n = a.shape[0]
    return _make(a.values[idx], (a,), lambda g: (_segment_matrix(idx, n) @ g,))


def gather_elements(a, rows, cols) -> Tensor:
    """Column vector of a[rows[e], cols[e]]."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)

    def backward(g):
        full = np.zeros_like(a.values)
        np.add.at(full, (rows, cols), g[:, 0])
        return (full,)

    return _make(a.values[rows, cols][:, None], (a,), backward)


def scatter_add_rows(a, idx, n) -> Tensor:
    """Row i of the result sums the rows of ``a`` whose idx equals i."""
    idx = np.asarray(idx, dtype=np.int64)
    out = _segment_matrix(idx, n) @ a.values
    return _make(out, (a,), lambda g: (g[idx],))


# -- reductions ----------------------------------------------------------------

def sum(a, axis=None) -> Tensor:  # noqa: A001
    if axis is None:
        return _make(np.array(a.values.sum()), (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))
    out = a.values.sum(axis=axis, keepdims=True)
    return _make(out, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))


def mean_rows(a) -> Tensor:
    """Mean over rows: N x d -> 1 x d."""
    n = a.shape[0]
    return _make(a.values.mean(axis=0, keepdims=True), (a,),
                 lambda g: (np.broadcast_to(g / n, a.shape).copy(),))


# -- softmaxes -----------------------------------------------------------------

def _softmax_backward(y, g, axis=1):
    return y * (g - (g * y).sum(axis=axis, keepdims=True))


def row_softmax(a) -> Tensor:
    x = a.values
    if x.ndim == 1:
        x = x[None, :]
    z = np.exp(x - x.max(axis=1, keepdims=True))
    y = (z / z.sum(axis=1, keepdims=True)).reshape(a.shape)
    return _make(y, (a,), lambda g: (_softmax_backward(y.reshape(x.shape), g.reshape(x.shape)).reshape(a.shape),))


def masked_row_softmax(a, mask, allow_empty=False) -> Tensor:
    """Softmax over the True entries of each row; masked entries are exactly 0.

    Rows with no True entry raise unless ``allow_empty``; then they come back as
    zeros and are flagged in the result's boolean ``empty`` attribute.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"mask shape {mask.shape} != {a.shape}")
    empty = ~mask.any(axis=1)
    if empty.any() and not allow_empty:
        raise NumericError(f"softmax over fully masked row(s) {np.flatnonzero(empty).tolist()}")
    x = np.where(mask, a.values, -np.inf)
    row_max = np.where(empty, 0.0, x.max(axis=1))
    z = np.where(mask, np.exp(x - row_max[:, None]), 0.0)
    denom = z.sum(axis=1, keepdims=True)
    y = np.divide(z, denom, out=np.zeros_like(z), where=denom > 0)
    out = _make(y, (a,), lambda g: (_softmax_backward(y, g),))
    out.empty = empty
    return out


def segment_softmax(a, segments, n) -> Tensor:
    """Softmax of a column vector within groups sharing a segment id."""
    seg = np.asarray(segments, dtype=np.int64)
    x = a.values[:, 0]
    seg_max = np.full(n, -np.inf)
    np.maximum.at(seg_max, seg, x)
    z = np.exp(x - seg_max[seg])
    denom = np.bincount(seg, weights=z, minlength=n)
    y = z / denom[seg]

    def backward(g):
        g = g[:, 0]
        dot = np.bincount(seg, weights=g * y, minlength=n)
        return ((y * (g - dot[seg]))[:, None],)

    return _make(y[:, None], (a,), backward)


# -- losses --------------------------------------------------------------------

def cross_entropy(logits, labels) -> Tensor:
    """Mean softmax cross-entropy of an n x C logit matrix against int labels."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.values
    if x.ndim != 2 or labels.shape != (x.shape[0],):
        raise ShapeError(f"cross_entropy: logits {x.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= x.shape[1]):
        raise ShapeError(f"cross_entropy: labels outside [0, {x.shape[1]})")
    shifted = x - x.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    n = x.shape[0]
    rows = np.arange(n)
    loss = (log_z - shifted[rows, labels]).mean()

    def backward(g):
        p = np.exp(shifted - log_z[:, None])
        p[rows, labels] -= 1.0
        return (p * (g / n),)

    return _make(np.array(loss), (logits,), backward)


def l1_loss(pred, target) -> Tensor:
    target = np.asarray(target, dtype=np.float64).reshape(pred.shape)
    diff = pred.values - target
    n = diff.size
    return _make(np.array(np.abs(diff).mean()), (pred,), lambda g: (np.sign(diff) * (g / n),))


# -- straight-through sampling -------------------------------------------------

@contextmanager
def surrogate_sampling():
    """Make straight-through ops emit their soft input instead of the indicator.

    Used by gradient checks so finite differences see a smooth function whose
    derivative is the identity passthrough the backward pass implements.
    """
    prev = getattr(_state, "surrogate", False)
    _state.surrogate = True
    try:
        yield
    finally:
        _state.surrogate = prev


def surrogate_enabled() -> bool:
    return getattr(_state, "surrogate", False)


def straight_through(m, hard) -> Tensor:
    """Forward ``hard`` (equals 1[..] - stopgrad(m) + m), gradient identity on m."""
    hard = np.asarray(hard, dtype=np.float64)
    if hard.shape != m.shape:
        raise ShapeError(f"straight_through: {hard.shape} vs {m.shape}")
    forward = m.values.copy() if surrogate_enabled() else hard
    return _make(forward, (m,), lambda g: (g,))


def straight_through_threshold(m, tau) -> Tensor:
    return straight_through(m, m.values > tau)


def topk_indicator(scores, k, candidates=None) -> np.ndarray:
    """Per-row indicator of the k largest scores among candidates.

    Ties go to the lower column index.
    """
    scores = np.asarray(scores)
    n_rows, n_cols = scores.shape
    if candidates is None:
        candidates = np.ones(scores.shape, dtype=bool)
    out = np.zeros(scores.shape)
    if k <= 0:
        return out
    keyed = np.where(candidates, scores, -np.inf)
    # stable sort on the negated scores keeps lower columns first among equals
    order = np.argsort(-keyed, axis=1, kind="stable")[:, :k]
    rows = np.repeat(np.arange(n_rows), order.shape[1])
    cols = order.reshape(-1)
    chosen = candidates[rows, cols]
    out[rows[chosen], cols[chosen]] = 1.0
    return out


def straight_through_topk(m, k, candidates=None) -> Tensor:
    return straight_through(m, topk_indicator(m.values, k, candidates))


# -- finite-difference check ---------------------------------------------------

def grad_check(f, params, eps=1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` builds a scalar Tensor from ``params`` (re-running the whole forward).
    The error per entry is |a - n| / (|a| + |n| + 1e-12). Straight-through ops
    use their soft surrogate on both paths.
    """
    with surrogate_sampling():
        for p in params:
            p.grad = None
        with Tape() as tape:
            out = f()
            if out.values.size != 1:
                raise ShapeError("grad_check needs a scalar function")
            tape.backward(out)
        analytic = [np.zeros_like(p.values) if p.grad is None else p.grad.copy() for p in params]
        worst = 0.0
        for p, a in zip(params, analytic):
            flat = p.values.reshape(-1)
            a_flat = a.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                up = f().item()
                flat[i] = orig - eps
                down = f().item()
                flat[i] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("non-finite output during grad_check")
                num = (up - down) / (2 * eps)
                err = abs(a_flat[i] - num) / (abs(a_flat[i]) + abs(num) + 1e-12)
                worst = max(worst, err)
        for p in params:
            p.grad = None
    return worst
