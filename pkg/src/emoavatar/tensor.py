"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tape`` records op applications in execution order (which is a valid
topological order of the data-flow DAG); ``backward`` replays the records
in reverse, accumulating vector-Jacobian products into per-tensor gradient
slots. The accumulation order is fixed and sequential, so identical inputs
produce bit-identical gradients.

There is no implicit broadcasting: elementwise ops require equal shapes,
with python scalars as the only exception. Row/column broadcasts exist as
explicit ops (``add_rowvec``, ``scale_rows``, ``scale_cols``) with their
own adjoints.

All ops accept ``tape=None`` to run forward-only without recording.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, DomainError


class Tensor:
    """Immutable-by-convention dense array of float64 values.

    Only the trainer mutates ``.data`` (in place, between tapes); every op
    allocates a fresh output tensor.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def const(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def param(data) -> Tensor:
    return Tensor(data, requires_grad=True)


class Tape:
    """Ordered record of op applications for one forward pass.

    A tape is single-use: after ``backward`` consumes it, further recording
    or a second backward raises ``ContractError``.
    """

    __slots__ = ("records", "consumed")

    def __init__(self):
        # each record: (out, vjp) where vjp(grad_out) yields (tensor, grad)
        self.records: list[tuple[Tensor, Callable]] = []
        self.consumed = False

    def _append(self, out: Tensor, vjp: Callable):
        if self.consumed:
            raise ContractError("tape already consumed by backward; build a new tape")
        self.records.append((out, vjp))


class Grads:
    """Gradient lookup for the leaves of one backward pass."""

    def __init__(self, slots: dict):
        self._slots = slots

    def of(self, t: Tensor) -> np.ndarray:
        """Gradient of the loss w.r.t. ``t``; zeros if the loss never saw it."""
        g = self._slots.get(id(t))
        if g is None:
            return np.zeros(t.data.shape, dtype=np.float64)
        return g


def _record(tape, inputs: Sequence[Tensor], out_data: np.ndarray, vjp: Callable) -> Tensor:
    needs = any(isinstance(t, Tensor) and t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if tape is not None and needs:
        tape._append(out, vjp)
    return out


def _dim_error(op: str, *shapes) -> DimensionError:
    pretty = " vs ".join(str(tuple(s)) for s in shapes)
    return DimensionError(f"{op}: incompatible shapes {pretty}")


# ---------------------------------------------------------------------------
# core ops


def matmul(tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise _dim_error("matmul", a.data.shape, b.data.shape)
    out_data = a.data @ b.data

    def vjp(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return _record(tape, (a, b), out_data, vjp)


def _binary(tape, op: str, a, b) -> Tensor:
    a_scalar = not isinstance(a, Tensor)
    b_scalar = not isinstance(b, Tensor)
    if a_scalar and b_scalar:
        raise ContractError(f"{op}: at least one operand must be a Tensor")
    if not a_scalar and not b_scalar and a.data.shape != b.data.shape:
        raise _dim_error(op, a.data.shape, b.data.shape)
    av = float(a) if a_scalar else a.data
    bv = float(b) if b_scalar else b.data

    if op == "add":
        out_data = av + bv

        def vjp(g):
            pairs = []
            if not a_scalar:
                pairs.append((a, g))
            if not b_scalar:
                pairs.append((b, g))
            return pairs

    elif op == "sub":
        out_data = av - bv

        def vjp(g):
            pairs = []
            if not a_scalar:
                pairs.append((a, g))
            if not b_scalar:
                pairs.append((b, -g))
            return pairs

    elif op == "mul":
        out_data = av * bv

        def vjp(g):
            pairs = []
            if not a_scalar:
                pairs.append((a, g * bv))
            if not b_scalar:
                pairs.append((b, g * av))
            return pairs

    else:  # pragma: no cover
        raise ContractError(f"unknown binary op {op}")

    inputs = tuple(t for t in (a, b) if isinstance(t, Tensor))
    return _record(tape, inputs, np.asarray(out_data, dtype=np.float64), vjp)


def add(tape, a, b) -> Tensor:
    return _binary(tape, "add", a, b)


def sub(tape, a, b) -> Tensor:
    return _binary(tape, "sub", a, b)


def mul(tape, a, b) -> Tensor:
    return _binary(tape, "mul", a, b)


def tanh(tape, x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def vjp(g):
        return ((x, g * (1.0 - y * y)),)

    return _record(tape, (x,), y, vjp)


def relu(tape, x: Tensor) -> Tensor:
    y = np.maximum(x.data, 0.0)

    def vjp(g):
        return ((x, g * (x.data > 0.0)),)

    return _record(tape, (x,), y, vjp)


def softmax_rows(tape, x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    if x.data.ndim != 2:
        raise _dim_error("softmax_rows", x.data.shape)
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        return ((x, y * (g - inner)),)

    return _record(tape, (x,), y, vjp)


def reduce_sum(tape, x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise DomainError("reduce over empty tensor")
    out_data = np.asarray(x.data.sum())

    def vjp(g):
        return ((x, np.full(x.data.shape, float(g))),)

    return _record(tape, (x,), out_data, vjp)


def reduce_mean(tape, x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise DomainError("reduce over empty tensor")
    n = x.data.size
    out_data = np.asarray(x.data.sum() / n)

    def vjp(g):
        return ((x, np.full(x.data.shape, float(g) / n)),)

    return _record(tape, (x,), out_data, vjp)


def reduce_sumsq(tape, x: Tensor) -> Tensor:
    if x.data.size == 0:
        raise DomainError("reduce over empty tensor")
    out_data = np.asarray((x.data * x.data).sum())

    def vjp(g):
        return ((x, (2.0 * float(g)) * x.data),)

    return _record(tape, (x,), out_data, vjp)


_REDUCERS = {"sum": reduce_sum, "mean": reduce_mean, "sumsq": reduce_sumsq}


def reduce(tape, op: str, x: Tensor) -> Tensor:
    if op not in _REDUCERS:
        raise ContractError(f"unknown reduce op {op!r}; expected one of {sorted(_REDUCERS)}")
    return _REDUCERS[op](tape, x)


# ---------------------------------------------------------------------------
# structural ops


def transpose(tape, x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise _dim_error("transpose", x.data.shape)
    out_data = np.ascontiguousarray(x.data.T)

    def vjp(g):
        return ((x, np.ascontiguousarray(g.T)),)

    return _record(tape, (x,), out_data, vjp)


def reshape(tape, x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.data.size:
        raise _dim_error("reshape", x.data.shape, shape)
    out_data = x.data.reshape(shape)

    def vjp(g):
        return ((x, g.reshape(x.data.shape)),)

    return _record(tape, (x,), out_data, vjp)


def concat_rows(tape, parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    ncols = {p.data.shape[1] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(ncols) != 1:
        raise _dim_error("concat_rows", *[p.data.shape for p in parts])
    out_data = np.concatenate([p.data for p in parts], axis=0)
    offsets = np.cumsum([0] + [p.data.shape[0] for p in parts])

    def vjp(g):
        return tuple((p, g[offsets[i]:offsets[i + 1]]) for i, p in enumerate(parts))

    return _record(tape, parts, out_data, vjp)


def concat_cols(tape, parts: Iterable[Tensor]) -> Tensor:
    parts = list(parts)
    nrows = {p.data.shape[0] for p in parts}
    if any(p.data.ndim != 2 for p in parts) or len(nrows) != 1:
        raise _dim_error("concat_cols", *[p.data.shape for p in parts])
    out_data = np.concatenate([p.data for p in parts], axis=1)
    offsets = np.cumsum([0] + [p.data.shape[1] for p in parts])

    def vjp(g):
        return tuple((p, np.ascontiguousarray(g[:, offsets[i]:offsets[i + 1]]))
                     for i, p in enumerate(parts))

    return _record(tape, parts, out_data, vjp)


def slice_cols(tape, x: Tensor, j0: int, j1: int) -> Tensor:
    if x.data.ndim != 2 or not (0 <= j0 <= j1 <= x.data.shape[1]):
        raise _dim_error(f"slice_cols[{j0}:{j1}]", x.data.shape)
    out_data = np.ascontiguousarray(x.data[:, j0:j1])

    def vjp(g):
        gx = np.zeros(x.data.shape)
        gx[:, j0:j1] = g
        return ((x, gx),)

    return _record(tape, (x,), out_data, vjp)


# ---------------------------------------------------------------------------
# explicit-broadcast ops


def _as_vec(v: Tensor, n: int, op: str) -> np.ndarray:
    data = v.data.reshape(-1) if v.data.ndim > 1 else v.data
    if data.shape != (n,):
        raise _dim_error(op, v.data.shape, (n,))
    return data


def add_rowvec(tape, x: Tensor, v: Tensor) -> Tensor:
    """Add a length-n vector to every row of an m-by-n matrix."""
    if x.data.ndim != 2:
        raise _dim_error("add_rowvec", x.data.shape)
    vd = _as_vec(v, x.data.shape[1], "add_rowvec")
    out_data = x.data + vd[None, :]

    def vjp(g):
        return ((x, g), (v, g.sum(axis=0).reshape(v.data.shape)))

    return _record(tape, (x, v), out_data, vjp)


def scale_rows(tape, x: Tensor, s: Tensor) -> Tensor:
    """Multiply row i of an m-by-n matrix by scalar s[i]."""
    if x.data.ndim != 2:
        raise _dim_error("scale_rows", x.data.shape)
    sd = _as_vec(s, x.data.shape[0], "scale_rows")
    out_data = x.data * sd[:, None]

    def vjp(g):
        return ((x, g * sd[:, None]), (s, (g * x.data).sum(axis=1).reshape(s.data.shape)))

    return _record(tape, (x, s), out_data, vjp)


def scale_cols(tape, x: Tensor, w: Tensor) -> Tensor:
    """Multiply column j of an m-by-n matrix by scalar w[j]."""
    if x.data.ndim != 2:
        raise _dim_error("scale_cols", x.data.shape)
    wd = _as_vec(w, x.data.shape[1], "scale_cols")
    out_data = x.data * wd[None, :]

    def vjp(g):
        return ((x, g * wd[None, :]), (w, (g * x.data).sum(axis=0).reshape(w.data.shape)))

    return _record(tape, (x, w), out_data, vjp)


def layernorm_rows(tape, x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization with learnable scale and shift."""
    if x.data.ndim != 2:
        raise _dim_error("layernorm_rows", x.data.shape)
    n = x.data.shape[1]
    gd = _as_vec(gamma, n, "layernorm_rows gamma")
    bd = _as_vec(beta, n, "layernorm_rows beta")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out_data = xhat * gd[None, :] + bd[None, :]

    def vjp(g):
        dxhat = g * gd[None, :]
        m1 = dxhat.mean(axis=1, keepdims=True)
        m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
        dx = inv * (dxhat - m1 - xhat * m2)
        dgamma = (g * xhat).sum(axis=0).reshape(gamma.data.shape)
        dbeta = g.sum(axis=0).reshape(beta.data.shape)
        return ((x, dx), (gamma, dgamma), (beta, dbeta))

    return _record(tape, (x, gamma, beta), out_data, vjp)


# ---------------------------------------------------------------------------
# rotation-coefficient ops
#
# a(s) = sin(sqrt(s))/sqrt(s) and b(s) = (1-cos(sqrt(s)))/s as smooth
# functions of the squared rotation angle s, with Taylor branches near zero
# so values and adjoints stay finite and finite-difference checks pass
# across s = 0.

_ROT_TAYLOR_CUTOFF = 1e-4


def _rot_a(s):
    small = np.abs(s) < _ROT_TAYLOR_CUTOFF
    s_safe = np.where(small, 1.0, np.abs(s))
    th = np.sqrt(s_safe)
    exact = np.sin(th) / th
    series = 1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0
    return np.where(small, series, exact)


def _rot_a_prime(s):
    small = np.abs(s) < _ROT_TAYLOR_CUTOFF
    s_safe = np.where(small, 1.0, np.abs(s))
    th = np.sqrt(s_safe)
    exact = (th * np.cos(th) - np.sin(th)) / (2.0 * s_safe * th)
    series = -1.0 / 6.0 + s / 60.0 - s * s / 1680.0
    return np.where(small, series, exact)


def _rot_b(s):
    small = np.abs(s) < _ROT_TAYLOR_CUTOFF
    s_safe = np.where(small, 1.0, np.abs(s))
    th = np.sqrt(s_safe)
    exact = (1.0 - np.cos(th)) / s_safe
    series = 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0
    return np.where(small, series, exact)


def _rot_b_prime(s):
    small = np.abs(s) < _ROT_TAYLOR_CUTOFF
    s_safe = np.where(small, 1.0, np.abs(s))
    th = np.sqrt(s_safe)
    exact = (th * np.sin(th) - 2.0 * (1.0 - np.cos(th))) / (2.0 * s_safe * s_safe)
    series = -1.0 / 24.0 + s / 360.0 - s * s / 13440.0
    return np.where(small, series, exact)


def rot_coef_a(tape, s: Tensor) -> Tensor:
    y = _rot_a(s.data)

    def vjp(g):
        return ((s, g * _rot_a_prime(s.data)),)

    return _record(tape, (s,), y, vjp)


def rot_coef_b(tape, s: Tensor) -> Tensor:
    y = _rot_b(s.data)

    def vjp(g):
        return ((s, g * _rot_b_prime(s.data)),)

    return _record(tape, (s,), y, vjp)


# ---------------------------------------------------------------------------
# rendering and clamping support


def gather_rows(tape, x: Tensor, idx: np.ndarray, fill: float = 0.5) -> Tensor:
    """Select rows of x by index; idx entries < 0 produce constant fill rows.

    The index array is held fixed during backward: gradients scatter-add to
    the selected rows only.
    """
    if x.data.ndim != 2:
        raise _dim_error("gather_rows", x.data.shape)
    idx = np.asarray(idx, dtype=np.int64).reshape(-1)
    if idx.size and idx.max() >= x.data.shape[0]:
        raise DomainError(f"gather_rows: index {int(idx.max())} out of range for {x.data.shape}")
    valid = idx >= 0
    out_data = np.full((idx.size, x.data.shape[1]), fill, dtype=np.float64)
    out_data[valid] = x.data[idx[valid]]

    def vjp(g):
        gx = np.zeros(x.data.shape)
        np.add.at(gx, idx[valid], g[valid])
        return ((x, gx),)

    return _record(tape, (x,), out_data, vjp)


def clamp01(tape, x: Tensor) -> Tensor:
    """Clamp to [0, 1]; the adjoint passes through strictly inside only."""
    y = np.clip(x.data, 0.0, 1.0)

    def vjp(g):
        return ((x, g * ((x.data > 0.0) & (x.data < 1.0))),)

    return _record(tape, (x,), y, vjp)


# ---------------------------------------------------------------------------
# backward and gradient checking


def backward(tape: Tape, loss: Tensor) -> Grads:
    """Populate gradients for every tensor contributing to a scalar loss.

    The tape is consumed; calling backward twice on one tape raises.
    """
    if tape.consumed:
        raise ContractError("backward already ran on this tape")
    if loss.data.shape != ():
        raise ContractError(f"loss must be scalar, got shape {loss.data.shape}")
    if not tape.records or tape.records[-1][0] is not loss:
        if not any(rec_out is loss for rec_out, _ in tape.records):
            raise ContractError("loss tensor was not produced on this tape")
    tape.consumed = True

    slots: dict[int, np.ndarray] = {id(loss): np.ones((), dtype=np.float64)}
    for out, vjp in reversed(tape.records):
        g = slots.get(id(out))
        if g is None:
            continue
        for t, contrib in vjp(g):
            if not t.requires_grad:
                continue
            slot = slots.get(id(t))
            if slot is None:
                slots[id(t)] = np.array(contrib, dtype=np.float64, copy=True)
            else:
                slot += contrib
    return Grads(slots)


def grad_check(f, x: np.ndarray, eps: float = 1e-4) -> float:
    """Compare reverse-mode gradients of f against central differences.

    ``f(tape, t)`` must build a scalar Tensor from the input tensor ``t``.
    Returns the worst relative error over all coordinates, with denominator
    max(|analytic|, |numeric|, 1e-8).
    """
    if not (1e-7 <= eps <= 1e-3):
        raise ContractError(f"grad_check eps {eps} outside [1e-7, 1e-3]")
    x = np.asarray(x, dtype=np.float64)

    tape = Tape()
    xt = Tensor(x, requires_grad=True)
    loss = f(tape, xt)
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError("grad_check target must return a scalar Tensor")
    analytic = backward(tape, loss).of(xt)

    worst = 0.0
    flat = x.reshape(-1)
    for i in range(flat.size):
        bump = np.zeros_like(flat)
        bump[i] = eps
        xp = (flat + bump).reshape(x.shape)
        xm = (flat - bump).reshape(x.shape)
        fp = f(None, Tensor(xp)).item()
        fm = f(None, Tensor(xm)).item()
        numeric = (fp - fm) / (2.0 * eps)
        a = analytic.reshape(-1)[i]
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
