"""Dense float64 tensors with reverse-mode gradient recording.

Operations executed while a Tape is active are recorded in forward order;
since forward execution is already a topological order, walking the record
backwards yields exact reverse topological order for the backward pass.
"""

from __future__ import annotations

import numpy as np

# Global toggle: every op output is checked for NaN/Inf when True.
CHECK_FINITE = True


class ShapeError(ValueError):
    """Operand shapes incompatible with the requested operation."""


class NonFiniteError(FloatingPointError):
    """A forward operation produced NaN or Inf."""


class DegenerateRowError(ValueError):
    """A softmax row had every position masked out."""


class MaskError(ValueError):
    """Mask contained values other than 0 and 1."""


class TapeError(RuntimeError):
    """Tape misuse: reuse after backward, or non-scalar loss."""


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of one forward pass, consumable by backward()."""

    def __init__(self):
        self._entries = []   # (out, inputs, backward_fn)
        self._tracked = set()
        self.consumed = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._entries)


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # arithmetic ----------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return pow_const(self, p)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def item(self):
        return float(self.data)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, inputs, backward_fn):
    """Create op output, verify finiteness, record on the active tape."""
    # cheap screen first (one reduction); only on suspicion do the full check,
    # since a finite-overflow of the sum itself is not a poisoned tensor
    if CHECK_FINITE and not np.isfinite(np.sum(data)):
        if not np.all(np.isfinite(data)):
            raise NonFiniteError("operation produced non-finite values")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None:
        if any(t.requires_grad or id(t) in tape._tracked for t in inputs):
            tape._entries.append((out, inputs, backward_fn))
            tape._tracked.add(id(out))
    return out


def _unbroadcast(g, shape):
    """Reduce gradient g back to the given (possibly broadcast) shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gs, ss) in enumerate(zip(g.shape, shape)):
        if ss == 1 and gs != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bw)


def div(a, b):
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), bw)


def pow_const(a, p):
    a = _as_tensor(a)
    p = float(p)

    def bw(g):
        return (g * p * a.data ** (p - 1),)

    return _make(a.data ** p, (a,), bw)


def texp(a):
    a = _as_tensor(a)
    out_data = np.exp(a.data)

    def bw(g):
        return (g * out_data,)

    return _make(out_data, (a,), bw)


def tlog(a):
    a = _as_tensor(a)

    def bw(g):
        return (g / a.data,)

    return _make(np.log(a.data), (a,), bw)


def sqrt(a):
    a = _as_tensor(a)
    out_data = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / out_data,)

    return _make(out_data, (a,), bw)


def relu(a):
    a = _as_tensor(a)

    def bw(g):
        return (g * (a.data > 0),)

    return _make(np.maximum(a.data, 0.0), (a,), bw)


def tanh(a):
    a = _as_tensor(a)
    out_data = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - out_data * out_data),)

    return _make(out_data, (a,), bw)


def minimum(a, b):
    """Elementwise min; subgradient routes to a where a <= b."""
    a, b = _as_tensor(a), _as_tensor(b)
    pick_a = a.data <= b.data

    def bw(g):
        return (_unbroadcast(g * pick_a, a.shape),
                _unbroadcast(g * ~pick_a, b.shape))

    return _make(np.minimum(a.data, b.data), (a, b), bw)


def clip(a, lo, hi):
    """Clamp to [lo, hi]; gradient passes only through unclipped entries."""
    a = _as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)

    def bw(g):
        return (g * inside,)

    return _make(np.clip(a.data, lo, hi), (a,), bw)


# ---------------------------------------------------------------------------
# reductions / structure
# ---------------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = _as_tensor(a)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).copy(),)

    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw)


def tmean(a, axis=None, keepdims=False):
    a = _as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g / count, a.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg / count, a.shape).copy(),)

    return _make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bw)


def reshape(a, shape):
    a = _as_tensor(a)

    def bw(g):
        return (g.reshape(a.shape),)

    return _make(a.data.reshape(shape), (a,), bw)


def transpose(a, axes):
    a = _as_tensor(a)
    inv = np.argsort(axes)

    def bw(g):
        return (g.transpose(inv),)

    return _make(a.data.transpose(axes), (a,), bw)


def take(a, idx):
    """Indexing with ints, slices or integer arrays; scatter-add backward."""
    a = _as_tensor(a)

    def bw(g):
        ga = np.zeros(a.shape)
        np.add.at(ga, idx, g)
        return (ga,)

    return _make(a.data[idx], (a,), bw)


def concat(tensors, axis=0):
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis),
                 tuple(tensors), bw)


# ---------------------------------------------------------------------------
# matmul / softmax
# ---------------------------------------------------------------------------

def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul expects operands with >= 2 dimensions")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")

    def bw(g):
        ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.ndim == 2 and a.ndim > 2:
            # x @ W case: one flat GEMM instead of batched outer products
            k_dim = a.shape[-1]
            gb = a.data.reshape(-1, k_dim).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(np.matmul(a.data, b.data), (a, b), bw)


NEG_INF = "neg_inf"
HADAMARD = "hadamard"


def softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _make(out_data, (a,), bw)


def log_softmax(a, axis=-1):
    a = _as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out_data = shifted - lse
    sm = np.exp(out_data)

    def bw(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _make(out_data, (a,), bw)


def masked_softmax(logits, mask, mode=NEG_INF, axis=-1):
    """Softmax with binary mask over the given axis.

    NEG_INF: masked positions get weight exactly 0, survivors renormalize.
    HADAMARD: logits are multiplied by the mask before the softmax, so a
    masked position still receives weight exp(0) relative to the rest.
    """
    logits = _as_tensor(logits)
    m = mask.data if isinstance(mask, Tensor) else np.asarray(mask, dtype=np.float64)
    if not np.all((m == 0.0) | (m == 1.0)):
        raise MaskError("mask must contain only 0 and 1")

    if mode == HADAMARD:
        masked = mul(logits, Tensor(m))
        return softmax(masked, axis=axis)
    if mode != NEG_INF:
        raise ValueError(f"unknown mask mode: {mode!r}")

    mb = np.broadcast_to(m, logits.shape)
    if np.any(mb.sum(axis=axis) == 0):
        raise DegenerateRowError("softmax row with every position masked")
    neg = np.where(mb == 1.0, logits.data, -np.inf)
    shifted = neg - neg.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        return (out_data * (g - inner),)

    return _make(out_data, (logits,), bw)


# ---------------------------------------------------------------------------
# backward
# ---------------------------------------------------------------------------

def backward(loss, tape):
    """Propagate d(loss)/d(tensor) through the tape.

    Returns a dict mapping id(tensor) -> gradient array for every tensor the
    loss reaches, and sets .grad on requires_grad tensors. The tape is
    consumed and cannot be reused.
    """
    if loss.data.size != 1:
        raise TapeError("backward requires a scalar loss")
    if tape.consumed:
        raise TapeError("tape already consumed by a previous backward")
    tape.consumed = True

    grads = {id(loss): np.ones_like(loss.data)}
    for out, inputs, bw in reversed(tape._entries):
        g = grads.get(id(out))
        if g is None:
            continue
        for t, gi in zip(inputs, bw(g)):
            if gi is None:
                continue
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
    # second pass: attach gradients to requires_grad leaves
    seen = set()
    for out, inputs, _ in tape._entries:
        for t in inputs:
            if t.requires_grad and id(t) not in seen:
                seen.add(id(t))
                g = grads.get(id(t))
                if g is not None:
                    t.grad = g.reshape(t.shape) if g.shape != t.shape else g
    if loss.requires_grad and id(loss) not in seen:
        loss.grad = grads[id(loss)]
    return grads
