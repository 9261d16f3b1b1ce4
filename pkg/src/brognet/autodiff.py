"""Small dense-array engine with tape-based reverse-mode differentiation.

Arrays are float64 numpy buffers wrapped in :class:`Tensor`. Operations record
themselves on the innermost active :class:`Tape`; ``Tape.gradient`` replays the
record backwards. Outside a tape nothing is recorded, which keeps roll-outs
cheap.

Example::

    w = Tensor(np.ones((3, 2)), requires_grad=True)
    with Tape() as tape:
        loss = sum_all(squareplus(matmul(x, w)))
    (gw,) = tape.gradient(loss, [w])
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

SQUAREPLUS_B = 4.0

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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


class Tape:
    """Ordered record of primitive operations.

    Entries are ``(output, inputs, vjp)`` where ``vjp(g)`` returns one
    cotangent (or ``None``) per input.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def gradient(self, target: Tensor, sources: Sequence[Tensor]) -> list[np.ndarray]:
        if target.data.size != 1:
            raise ValueError(f"gradient target must be scalar, got shape {target.shape}")
        grads: dict[int, np.ndarray] = {id(target): np.ones_like(target.data)}
        for out, inputs, vjp in reversed(self.entries):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, ct in zip(inputs, vjp(g)):
                if ct is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + ct
                else:
                    grads[key] = ct
        # leaves that never touched the target get exact zeros
        return [grads.get(id(s), np.zeros_like(s.data)) for s in sources]


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(out_data: np.ndarray, inputs: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    if _TAPES and any(t.requires_grad for t in inputs):
        out = Tensor(out_data, requires_grad=True)
        _TAPES[-1].entries.append((out, inputs, vjp))
        return out
    return Tensor(out_data)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    return _record(
        ad * bd, (a, b), lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape))
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd
    return _record(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _record(-a.data, (a,), lambda g: (-g,))


def square(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(ad * ad, (a,), lambda g: (2.0 * ad * g,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _record(out, (a,), lambda g: (0.5 * g / out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _record(np.log(ad), (a,), lambda g: (g / ad,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)``; gradient flows only where ``a > floor``."""
    a = as_tensor(a)
    keep = a.data > floor
    return _record(np.where(keep, a.data, floor), (a,), lambda g: (g * keep,))


def squareplus(a, b: float = SQUAREPLUS_B) -> Tensor:
    a = as_tensor(a)
    x = a.data
    root = np.hypot(x, math.sqrt(b))
    # b / (2 (root + |x|)) avoids cancellation for x << 0
    out = np.where(x >= 0, 0.5 * (x + root), 0.5 * b / (root + np.abs(x)))
    return _record(out, (a,), lambda g: (g * out / root,))


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return _record(ad @ bd, (a, b), lambda g: (g @ bd.T, ad.T @ g))


def affine(x, w, bias) -> Tensor:
    """``x @ w + bias`` for x:[m,k], w:[k,n], bias:[n], recorded as a single op."""
    x, w, bias = as_tensor(x), as_tensor(w), as_tensor(bias)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine dimension mismatch: {x.shape} x {w.shape}")
    if bias.shape != (w.shape[1],):
        raise ValueError(f"affine bias shape {bias.shape} does not match weight {w.shape}")
    xd, wd = x.data, w.data
    return _record(xd @ wd + bias.data, (x, w, bias), lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)))


# ---------------------------------------------------------------- reductions / shape

def sum_all(a) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _record(np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def sum_axis(a, axis: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    return _record(
        a.data.sum(axis=axis),
        (a,),
        lambda g: (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),),
    )


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _record(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence, axis: int = -1) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    sizes = [p.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]
    return _record(
        np.concatenate([p.data for p in parts], axis=axis),
        parts,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def slice_last(a, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def vjp(g):
        out = np.zeros(shape)
        out[..., start:stop] = g
        return (out,)

    return _record(a.data[..., start:stop], (a,), vjp)


def gather_rows(a, index: np.ndarray) -> Tensor:
    """Rows ``a[index]``; the backward pass scatter-adds."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.intp)
    n = a.shape[0]

    def vjp(g):
        out = np.zeros((n,) + g.shape[1:])
        np.add.at(out, index, g)
        return (out,)

    return _record(a.data[index], (a,), vjp)


def segment_sum(values, segment_ids, num_segments: int) -> Tensor:
    """Sum rows of ``values`` sharing a segment id; empty segments give zero rows."""
    values = as_tensor(values)
    ids = np.asarray(segment_ids, dtype=np.intp)
    if ids.shape[0] != values.shape[0]:
        raise ValueError(f"segment_sum: {ids.shape[0]} ids for {values.shape[0]} rows")
    if ids.size and (ids.min() < 0 or ids.max() >= num_segments):
        raise IndexError(f"segment id out of range [0, {num_segments})")
    out = np.zeros((num_segments,) + values.shape[1:])
    np.add.at(out, ids, values.data)
    return _record(out, (values,), lambda g: (g[ids],))


# ---------------------------------------------------------------- MLP

def mlp_forward(layers: Sequence[tuple[Tensor, Tensor]], x, activate_last: bool) -> Tensor:
    """Affine layers with squareplus between them.

    ``layers`` is a list of ``(weight[k, n], bias[n])``. The last layer is
    followed by squareplus only if ``activate_last``.
    """
    h = as_tensor(x)
    for i, (w, b) in enumerate(layers):
        h = affine(h, w, b)
        if i < len(layers) - 1 or activate_last:
            h = squareplus(h)
    return h


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
) -> tuple[dict[str, np.ndarray], AdamState]:
    if set(params) != set(grads) or set(params) != set(state.m):
        raise KeyError("adam_step: params, grads and optimizer state hold different keys")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m_new, v_new = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ValueError(f"adam_step: shape mismatch for {k!r}")
        m = b1 * state.m[k] + (1.0 - b1) * g
        v = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        m_new[k], v_new[k] = m, v
    return new_params, AdamState(m_new, v_new, t, b1, b2, state.eps)


__all__ = [
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "affine",
    "as_tensor",
    "concat",
    "div",
    "gather_rows",
    "log",
    "matmul",
    "maximum",
    "mlp_forward",
    "mul",
    "neg",
    "reshape",
    "segment_sum",
    "slice_last",
    "sqrt",
    "square",
    "squareplus",
    "sub",
    "sum_all",
    "sum_axis",
]
