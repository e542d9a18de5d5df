"""Dense-matrix reverse-mode differentiation.

Every value is a 2-D float64 array. A :class:`Tape` records primitive ops in
execution order; :meth:`Tape.backward` walks the record backwards and returns
gradients for every tracked tensor.

    tape = Tape()
    w = tape.var(np.ones((3, 2)))
    loss = ad.sum(ad.relu(x @ w))
    grads = tape.backward(loss)
    grads[w]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import NonFiniteError

DIST_TOL = 1e-9


class Tensor:
    __slots__ = ("value", "tape", "id", "name")

    def __init__(self, value, tape=None, id=None, name=None):
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 0:
            value = value.reshape(1, 1)
        elif value.ndim == 1:
            value = value.reshape(1, -1)
        if value.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {value.shape}")
        self.value = value
        self.tape = tape
        self.id = id
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def rows(self):
        return self.value.shape[0]

    @property
    def cols(self):
        return self.value.shape[1]

    @property
    def tracked(self):
        return self.id is not None

    def item(self) -> float:
        if self.value.shape != (1, 1):
            raise ValueError(f"item() on shape {self.shape}")
        return float(self.value[0, 0])

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        tag = f"#{self.id}" if self.tracked else "const"
        return f"Tensor({tag}, shape={self.shape})"


@dataclass
class Record:
    op: str
    inputs: tuple
    output: int
    vjp: Callable = field(repr=False)


class Gradients(dict):
    """Gradient map keyed by tensor id; also indexable by :class:`Tensor`."""

    def __getitem__(self, key):
        if isinstance(key, Tensor):
            if key.id is None:
                raise KeyError("constant tensors have no gradient")
            key = key.id
        return super().__getitem__(key)


class Tape:
    def __init__(self, check_finite: bool = True):
        self.records: list[Record] = []
        self.check_finite = check_finite
        self._shapes: list[tuple] = []

    def var(self, value, name=None) -> Tensor:
        """A tracked leaf (parameter or differentiable input)."""
        t = Tensor(np.array(value, dtype=np.float64), self, len(self._shapes), name)
        self._shapes.append(t.shape)
        return t

    def emit(self, op: str, inputs, value, vjp) -> Tensor:
        out_id = len(self._shapes)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"op #{out_id} ({op}) produced non-finite values")
        t = Tensor(value, self, out_id)
        self._shapes.append(t.shape)
        self.records.append(Record(op, tuple(i.id for i in inputs), out_id, vjp))
        return t

    def backward(self, loss: Tensor) -> Gradients:
        if loss.tape is not self or loss.id is None:
            raise ValueError("loss is not on this tape")
        if loss.shape != (1, 1):
            raise ValueError(f"loss must be 1x1, got {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.id: np.ones((1, 1))}
        for rec in reversed(self.records):
            if rec.output > loss.id:
                continue
            g = grads.get(rec.output)
            if g is None:
                continue
            for in_id, gi in zip(rec.inputs, rec.vjp(g)):
                if in_id is None or gi is None:
                    continue
                if in_id in grads:
                    grads[in_id] = grads[in_id] + gi
                else:
                    grads[in_id] = gi
        out = Gradients()
        for i, shape in enumerate(self._shapes):
            g = grads.get(i)
            out[i] = np.zeros(shape) if g is None else np.broadcast_to(g, shape).copy()
        if self.check_finite:
            for i, g in out.items():
                if not np.all(np.isfinite(g)):
                    raise NonFiniteError(f"non-finite gradient for tensor #{i}")
        return out


def const(value) -> Tensor:
    return Tensor(value)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tape_of(*xs) -> Tape:
    tapes = {id(x.tape): x.tape for x in xs if x.tape is not None}
    if len(tapes) > 1:
        raise ValueError("tensors from different tapes")
    return next(iter(tapes.values())) if tapes else None


def _emit(op, inputs, value, vjp) -> Tensor:
    tape = _tape_of(*inputs)
    if tape is None:
        return Tensor(value)
    return tape.emit(op, inputs, value, vjp)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(op, a, b):
    ok = a.rows in (b.rows, 1) or b.rows == 1
    ok = ok and (a.cols in (b.cols, 1) or b.cols == 1)
    if not ok:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} are incompatible")


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.rows:
        raise ValueError(f"matmul: {a.shape} @ {b.shape}")
    av, bv = a.value, b.value
    return _emit("matmul", (a, b), av @ bv, lambda g: (g @ bv.T, av.T @ g))


def add(a, b) -> Tensor:
    """Elementwise sum; a (1, c), (r, 1) or (1, 1) operand is broadcast."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("add", a, b)
    sa, sb = a.shape, b.shape
    return _emit("add", (a, b), a.value + b.value, lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("sub", a, b)
    sa, sb = a.shape, b.shape
    return _emit("sub", (a, b), a.value - b.value, lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast("mul", a, b)
    av, bv = a.value, b.value
    return _emit(
        "mul", (a, b), av * bv, lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _emit("scale", (a,), a.value * c, lambda g: (g * c,))


def row_scale(x, w) -> Tensor:
    """Multiply row ``i`` of ``x`` by ``w[i]``."""
    x = _as_tensor(x)
    if not isinstance(w, Tensor):
        w = Tensor(np.asarray(w, dtype=np.float64).reshape(-1, 1))
    if w.shape != (x.rows, 1):
        raise ValueError(f"row_scale: weights {w.shape} for {x.shape}")
    xv, wv = x.value, w.value
    return _emit("row_scale", (x, w), xv * wv, lambda g: (g * wv, (g * xv).sum(axis=1, keepdims=True)))


def transpose(x) -> Tensor:
    x = _as_tensor(x)
    return _emit("transpose", (x,), x.value.T.copy(), lambda g: (g.T,))


def relu(x) -> Tensor:
    x = _as_tensor(x)
    on = x.value > 0
    return _emit("relu", (x,), np.where(on, x.value, 0.0), lambda g: (g * on,))


def exp(x) -> Tensor:
    x = _as_tensor(x)
    e = np.exp(x.value)
    return _emit("exp", (x,), e, lambda g: (g * e,))


def log(x) -> Tensor:
    x = _as_tensor(x)
    xv = x.value
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.log(xv)  # bad inputs are trapped by the tape
    return _emit("log", (x,), out, lambda g: (g / xv,))


def clip(x, lo=-np.inf, hi=np.inf) -> Tensor:
    """Clamp into [lo, hi]; gradient is zero where clamped."""
    x = _as_tensor(x)
    inside = (x.value >= lo) & (x.value <= hi)
    return _emit("clip", (x,), np.clip(x.value, lo, hi), lambda g: (g * inside,))


def softmax_rows(x) -> Tensor:
    x = _as_tensor(x)
    if x.cols == 0:
        raise ValueError("softmax_rows on zero columns")
    z = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (p * (g - (g * p).sum(axis=1, keepdims=True)),)

    return _emit("softmax_rows", (x,), p, vjp)


def sum(x) -> Tensor:  # noqa: A001
    x = _as_tensor(x)
    shape = x.shape
    return _emit("sum", (x,), np.array([[x.value.sum()]]), lambda g: (np.full(shape, g[0, 0]),))


def mean_rows(x) -> Tensor:
    """Column-wise mean over rows: (r, c) -> (1, c)."""
    x = _as_tensor(x)
    r = x.rows
    if r == 0:
        raise ValueError("mean_rows over zero rows")
    shape = x.shape
    return _emit(
        "mean_rows", (x,), x.value.mean(axis=0, keepdims=True), lambda g: (np.broadcast_to(g / r, shape),)
    )


def select_rows(x, idx) -> Tensor:
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _emit("select_rows", (x,), x.value[idx], vjp)


def mask_cols(x, idx) -> Tensor:
    """Keep only the listed columns, in the listed order."""
    x = _as_tensor(x)
    idx = np.asarray(idx, dtype=np.int64)
    shape = x.shape

    def vjp(g):
        out = np.zeros(shape)
        out[:, idx] = g
        return (out,)

    return _emit("mask_cols", (x,), x.value[:, idx], vjp)


def concat_cols(xs) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if len({x.rows for x in xs}) != 1:
        raise ValueError("concat_cols: row counts differ")
    bounds = np.cumsum([0] + [x.cols for x in xs])

    def vjp(g):
        return tuple(g[:, bounds[i] : bounds[i + 1]] for i in range(len(xs)))

    return _emit("concat_cols", tuple(xs), np.concatenate([x.value for x in xs], axis=1), vjp)


def neighbor_mean_aggregate(adjacency, h) -> Tensor:
    """Mean of neighbor rows (center excluded); empty neighborhoods give zeros."""
    h = _as_tensor(h)
    if adjacency.n_nodes != h.rows:
        raise ValueError(f"aggregate: {adjacency.n_nodes}-node adjacency, {h.rows} rows")
    indptr, indices = adjacency.indptr, adjacency.indices
    out = _kernels.neighbor_mean(indptr, indices, h.value)
    return _emit(
        "neighbor_mean_aggregate", (h,), out, lambda g: (_kernels.neighbor_mean_adjoint(indptr, indices, g),)
    )


def cosine_rows(a, b) -> Tensor:
    """Row-wise cosine similarity, (r, c) x (r, c) -> (r, 1). ``b`` may be (1, c)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.cols != b.cols or b.rows not in (1, a.rows):
        raise ValueError(f"cosine_rows: {a.shape} vs {b.shape}")
    av, bv = a.value, b.value
    na = np.linalg.norm(av, axis=1, keepdims=True)
    nb = np.linalg.norm(bv, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValueError("cosine_rows: zero-norm row")
    dot = (av * bv).sum(axis=1, keepdims=True)
    cos = dot / (na * nb)

    def vjp(g):
        ga = g * (bv / (na * nb) - cos * av / na**2)
        gb = g * (av / (na * nb) - cos * bv / nb**2)
        return ga, _unbroadcast(gb, bv.shape)

    return _emit("cosine_rows", (a, b), cos, vjp)


def _check_distribution(name, v):
    if np.any(v < 0) or np.any(np.abs(v.sum(axis=1) - 1.0) > DIST_TOL):
        raise ValueError(f"kl_rows: {name} rows must be distributions (nonnegative, sum 1)")


def kl_rows(p, q) -> Tensor:
    """Per-row KL(p || q) = sum p (log p - log q), (r, c) -> (r, 1).

    ``q`` may be a single (1, c) row shared by all rows of ``p``. Entries
    with p == 0 contribute 0.
    """
    p, q = _as_tensor(p), _as_tensor(q)
    if p.cols != q.cols or q.rows not in (1, p.rows):
        raise ValueError(f"kl_rows: {p.shape} vs {q.shape}")
    pv, qv = p.value, q.value
    _check_distribution("p", pv)
    _check_distribution("q", qv)
    pos = pv > 0
    logp = np.log(np.where(pos, pv, 1.0))
    with np.errstate(divide="ignore"):
        logq = np.log(qv)
    terms = np.where(pos, pv * (logp - logq), 0.0)
    out = terms.sum(axis=1, keepdims=True)

    def vjp(g):
        gp = g * np.where(pos, logp - logq + 1.0, 0.0)
        gq = _unbroadcast(-g * np.where(pos, pv / qv, 0.0), qv.shape)
        return gp, gq

    return _emit("kl_rows", (p, q), out, vjp)


# ---------------------------------------------------------------------------
# gradient verification
# ---------------------------------------------------------------------------


@dataclass
class GradCheckReport:
    errors: dict
    tol: float
    eps: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tol


def grad_check(build, params: dict, eps: float = 1e-5, tol: float = 1e-6) -> GradCheckReport:
    """Compare tape gradients with central differences.

    ``build(tape, tensors)`` receives a dict of tracked tensors (same keys as
    ``params``) and returns the scalar loss. The per-parameter error is
    max |analytic - numeric| / max(1, |numeric|).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def run(vals):
        tape = Tape()
        ts = {k: tape.var(v, name=k) for k, v in vals.items()}
        return tape, ts, build(tape, ts)

    tape, ts, loss = run(params)
    grads = tape.backward(loss)
    errors = {}
    for name, base in params.items():
        analytic = grads[ts[name]]
        numeric = np.zeros_like(base)
        for ix in np.ndindex(base.shape):
            vals = dict(params)
            for sign in (1, -1):
                bumped = base.copy()
                bumped[ix] += sign * eps
                vals[name] = bumped
                f = run(vals)[2].item()
                if not np.isfinite(f):
                    raise NonFiniteError(f"non-finite loss while perturbing {name}{ix}")
                numeric[ix] += sign * f
            numeric[ix] /= 2 * eps
        err = np.abs(analytic - numeric) / np.maximum(1.0, np.abs(numeric))
        errors[name] = float(err.max()) if err.size else 0.0
    return GradCheckReport(errors=errors, tol=tol, eps=eps)
