"""Tape-based reverse-mode differentiation on numpy arrays.

A ``Tape`` context manager records every operation whose inputs require
gradients.  ``backward(tape, loss)`` replays the records in reverse and
returns a dict mapping each reachable tensor to its gradient.  Ops are
plain functions on ``Tensor`` wrappers; data is always float64 numpy.

The op set is deliberately small: elementwise arithmetic, matmul with
numpy broadcasting (including batched 3-d stacks), a handful of pointwise
nonlinearities, reductions, and shape surgery (concat / slice / reshape /
transpose).  ``grad_check`` compares any scalar-valued function of the
parameters against central finite differences.
"""

import numpy as np

from .errors import NotOnTape, ShapeMismatch

_TAPE_STACK = []


class Tensor:
    """A float64 array plus a requires_grad flag.  Hashable by identity."""

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}{flag})"


def parameter(data):
    """A tensor that gradients will be tracked for.

    Owns a contiguous buffer so in-place updates (optimizers, grad_check
    probes) through any view of .data are visible to later evaluations.
    """
    return Tensor(np.ascontiguousarray(data, dtype=np.float64), requires_grad=True)


def constant(data):
    """A tensor excluded from gradient tracking."""
    return Tensor(data, requires_grad=False)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Records operations while active; innermost tape wins when nested."""

    def __init__(self):
        self._entries = []

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False


def _record(out, inputs, vjps):
    if _TAPE_STACK and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        _TAPE_STACK[-1]._entries.append((out, tuple(inputs), tuple(vjps)))
    return out


def _unbroadcast(grad, shape):
    """Sum grad down to `shape`, undoing numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for ax, size in enumerate(shape):
        if size == 1 and grad.shape[ax] != 1:
            grad = grad.sum(axis=ax, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data + b.data)
    return _record(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def subtract(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data - b.data)
    return _record(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
    ))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    out = Tensor(a.data * b.data)
    return _record(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def scale(a, c):
    """Multiply by a plain python number."""
    a = _as_tensor(a)
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), (lambda g: g * c,))


# ---------------------------------------------------------------------------
# matmul (1-d, 2-d, and batched 3-d via numpy semantics)
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    A, B = a.data, b.data
    out = Tensor(np.matmul(A, B))

    a1, b1 = A.ndim == 1, B.ndim == 1
    Ax = A[None, :] if a1 else A
    Bx = B[:, None] if b1 else B

    def promote_g(g):
        if a1 and b1:
            return np.asarray(g).reshape(1, 1)
        if a1:
            return np.expand_dims(g, -2)
        if b1:
            return np.expand_dims(g, -1)
        return g

    def vjp_a(g):
        gx = promote_g(g)
        ga = _unbroadcast(np.matmul(gx, np.swapaxes(Bx, -1, -2)), Ax.shape)
        return ga.reshape(A.shape) if a1 else ga

    def vjp_b(g):
        gx = promote_g(g)
        gb = _unbroadcast(np.matmul(np.swapaxes(Ax, -1, -2), gx), Bx.shape)
        return gb.reshape(B.shape) if b1 else gb

    return _record(out, (a, b), (vjp_a, vjp_b))


# ---------------------------------------------------------------------------
# pointwise nonlinearities
# ---------------------------------------------------------------------------

def exp(a):
    a = _as_tensor(a)
    y = np.exp(a.data)
    out = Tensor(y)
    return _record(out, (a,), (lambda g: g * y,))


def log(a):
    a = _as_tensor(a)
    out = Tensor(np.log(a.data))
    return _record(out, (a,), (lambda g: g / a.data,))


def tanh(a):
    a = _as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), (lambda g: g * (1.0 - y * y),))


def sigmoid(a):
    a = _as_tensor(a)
    x = a.data
    y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))),
                 np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
    out = Tensor(y)
    return _record(out, (a,), (lambda g: g * y * (1.0 - y),))


def relu(a):
    """max(x, 0); the subgradient at 0 is taken to be 0."""
    a = _as_tensor(a)
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record(out, (a,), (lambda g: g * mask,))


def square(a):
    a = _as_tensor(a)
    out = Tensor(a.data * a.data)
    return _record(out, (a,), (lambda g: g * 2.0 * a.data,))


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def reduce_sum(a, axis=None):
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis))

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return _record(out, (a,), (vjp,))


def squared_norm(a):
    """Sum of squared entries, as a scalar tensor."""
    a = _as_tensor(a)
    out = Tensor(np.sum(a.data * a.data))
    return _record(out, (a,), (lambda g: g * 2.0 * a.data,))


def logsumexp(a, axis=-1):
    """log(sum(exp(a), axis)), stabilized by a detached max shift."""
    a = _as_tensor(a)
    m = np.max(a.data, axis=axis, keepdims=True)
    shifted = subtract(a, constant(m))
    red = log(reduce_sum(exp(shifted), axis=axis))
    return add(red, constant(np.squeeze(m, axis=axis)))


# ---------------------------------------------------------------------------
# shape surgery
# ---------------------------------------------------------------------------

def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    def make_vjp(i):
        lo, hi = int(offsets[i]), int(offsets[i + 1])

        def vjp(g):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            return g[tuple(idx)]

        return vjp

    return _record(out, tuple(tensors), tuple(make_vjp(i) for i in range(len(tensors))))


def slice_block(a, start, stop, axis=-1):
    """Contiguous slice [start:stop) along one axis."""
    a = _as_tensor(a)
    ax = axis % a.data.ndim
    idx = [slice(None)] * a.data.ndim
    idx[ax] = slice(start, stop)
    out = Tensor(a.data[tuple(idx)])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[tuple(idx)] = g
        return full

    return _record(out, (a,), (vjp,))


def reshape(a, shape):
    a = _as_tensor(a)
    out = Tensor(a.data.reshape(shape))
    return _record(out, (a,), (lambda g: g.reshape(a.data.shape),))


def transpose(a, axes=None):
    a = _as_tensor(a)
    out = Tensor(np.transpose(a.data, axes))
    if axes is None:
        inv = None
    else:
        inv = tuple(np.argsort(axes))
    return _record(out, (a,), (lambda g: np.transpose(g, inv),))


# ---------------------------------------------------------------------------
# backward pass and finite-difference checking
# ---------------------------------------------------------------------------

def backward(tape, out):
    """Gradients of the scalar `out` w.r.t. every tensor on the tape.

    Returns a dict keyed by tensor object; leaves missing from the dict
    received zero gradient.
    """
    if out.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar output, got shape {out.data.shape}")
    if not out.requires_grad:
        raise NotOnTape("output does not depend on any tracked tensor")
    grads = {out: np.ones_like(out.data)}
    for node, inputs, vjps in reversed(tape._entries):
        g = grads.get(node)
        if g is None:
            continue
        for inp, vjp in zip(inputs, vjps):
            if not inp.requires_grad:
                continue
            contrib = vjp(g)
            prev = grads.get(inp)
            grads[inp] = contrib if prev is None else prev + contrib
    return grads


def grad_check(fn, params, eps=1e-5):
    """Max relative error between taped gradients and central differences.

    fn(params) -> scalar Tensor must be re-evaluable; params is a list of
    tensors with requires_grad=True.  Relative error uses the larger of
    the two magnitudes with a 1e-8 floor.
    """
    with Tape() as tape:
        out = fn(params)
    grads = backward(tape, out)

    worst = 0.0
    for p in params:
        analytic = grads.get(p)
        if analytic is None:
            analytic = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = float(fn(params).data)
            flat[i] = keep - eps
            down = float(fn(params).data)
            flat[i] = keep
            numeric = (up - down) / (2.0 * eps)
            a = float(analytic.reshape(-1)[i])
            denom = max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, abs(a - numeric) / denom)
    return worst
