"""Minimal reverse-mode autodiff over numpy arrays.

Forward primitives cover what the attention encoder, hypernetwork and
masked decoder need: matrix products, concatenation, softmax/log-softmax
over the last axis, tanh/relu, masked fill, per-row normalization and the
reductions used by the losses.  Recording happens only inside a `Tape`
context; outside of one every op is a plain numpy computation.

Parameters are float32 by default.  Gradient checks promote everything to
float64 and compare against central finite differences.

Forward/backward on one tape is single-threaded; distinct tapes over distinct
parameter copies may run in parallel.  Applying gradients to parameters needs
exclusive access.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ContractViolation, ShapeError, TapeError

DEFAULT_DTYPE = np.float32


class Array:
    """A (possibly tracked) dense array node."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_parents", "_vjp", "_tracked")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = np.ascontiguousarray(arr, dtype=dtype)
        elif arr.dtype not in (np.float32, np.float64):
            arr = np.ascontiguousarray(arr, dtype=DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._parents: tuple[Array, ...] = ()
        self._vjp: Callable[[np.ndarray], Iterable[tuple["Array", np.ndarray]]] | None = None
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Array(shape={self.data.shape}, dtype={self.data.dtype}{tag})"


class Tape:
    """Ordered record of tracked operations; consumable by one backward pass."""

    def __init__(self):
        self._nodes: list[Array] = []
        self._spent = False

    def __enter__(self) -> "Tape":
        _ACTIVE.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE.pop()

    def __len__(self) -> int:
        return len(self._nodes)


_ACTIVE: list[Tape] = []


def _as_array(x, like: Array | None = None) -> Array:
    if isinstance(x, Array):
        return x
    dtype = like.dtype if like is not None else None
    return Array(np.asarray(x, dtype=dtype))


def _track(out: Array, parents: Sequence[Array], vjp) -> Array:
    """Register `out` on the active tape when any parent is tracked."""
    if _ACTIVE and any(p._tracked for p in parents):
        out._tracked = True
        out._parents = tuple(parents)
        out._vjp = vjp
        _ACTIVE[-1]._nodes.append(out)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum gradient `g` down to `shape` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# arithmetic


def add(a, b) -> Array:
    a, b = _as_array(a), _as_array(b, like=a)
    out = Array(a.data + b.data)

    def vjp(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(g, b.shape)))

    return _track(out, (a, b), vjp)


def sub(a, b) -> Array:
    a, b = _as_array(a), _as_array(b, like=a)
    out = Array(a.data - b.data)

    def vjp(g):
        return ((a, _unbroadcast(g, a.shape)), (b, _unbroadcast(-g, b.shape)))

    return _track(out, (a, b), vjp)


def mul(a, b) -> Array:
    a, b = _as_array(a), _as_array(b, like=a)
    out = Array(a.data * b.data)

    def vjp(g):
        return ((a, _unbroadcast(g * b.data, a.shape)), (b, _unbroadcast(g * a.data, b.shape)))

    return _track(out, (a, b), vjp)


def div(a, b) -> Array:
    a, b = _as_array(a), _as_array(b, like=a)
    out = Array(a.data / b.data)

    def vjp(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ((a, ga), (b, gb))

    return _track(out, (a, b), vjp)


def neg(a) -> Array:
    a = _as_array(a)
    out = Array(-a.data)
    return _track(out, (a,), lambda g: ((a, -g),))


def matmul(a: Array, b: Array) -> Array:
    """`a @ b` where `b` is either a 2-D weight or batched like `a`."""
    a, b = _as_array(a), _as_array(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    if b.ndim != 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul batch extents differ: {a.shape} @ {b.shape}")
    out = Array(a.data @ b.data)

    def vjp(g):
        ga = g @ b.data.swapaxes(-1, -2)
        if b.ndim == 2:
            k, c = b.shape
            gb = a.data.reshape(-1, k).T @ g.reshape(-1, c)
        else:
            gb = a.data.swapaxes(-1, -2) @ g
        return ((a, ga), (b, gb))

    return _track(out, (a, b), vjp)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a: Array, shape) -> Array:
    a = _as_array(a)
    out = Array(a.data.reshape(shape))
    return _track(out, (a,), lambda g: ((a, g.reshape(a.shape)),))


def transpose(a: Array, axes) -> Array:
    a = _as_array(a)
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    out = Array(a.data.transpose(axes))
    return _track(out, (a,), lambda g: ((a, g.transpose(inv)),))


def concat(arrays: Sequence[Array], axis: int = -1) -> Array:
    arrays = [_as_array(x) for x in arrays]
    out = Array(np.concatenate([x.data for x in arrays], axis=axis))
    sizes = [x.shape[axis] for x in arrays]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(zip(arrays, pieces))

    return _track(out, arrays, vjp)


def broadcast_to(a: Array, shape) -> Array:
    a = _as_array(a)
    out = Array(np.broadcast_to(a.data, shape).copy())
    return _track(out, (a,), lambda g: ((a, _unbroadcast(g, a.shape)),))


def narrow(a: Array, axis: int, start: int, length: int) -> Array:
    """Contiguous slice `[start, start+length)` along one axis."""
    a = _as_array(a)
    if start < 0 or start + length > a.shape[axis]:
        raise ShapeError(f"narrow [{start}:{start + length}) out of range for axis {axis} of {a.shape}")
    idx = [slice(None)] * a.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Array(a.data[idx].copy())

    def vjp(g):
        ga = np.zeros_like(a.data)
        ga[idx] = g
        return ((a, ga),)

    return _track(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions


def asum(a: Array, axis=None, keepdims: bool = False) -> Array:
    a = _as_array(a)
    out = Array(a.data.sum(axis=axis, keepdims=keepdims))

    def vjp(g):
        if axis is None:
            return ((a, np.broadcast_to(g, a.shape).copy()),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return ((a, np.broadcast_to(gg, a.shape).copy()),)

    return _track(out, (a,), vjp)


def amean(a: Array, axis=None, keepdims: bool = False) -> Array:
    a = _as_array(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(asum(a, axis=axis, keepdims=keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a) -> Array:
    a = _as_array(a)
    y = np.tanh(a.data)
    out = Array(y)
    return _track(out, (a,), lambda g: ((a, g * (1.0 - y * y)),))


def relu(a) -> Array:
    a = _as_array(a)
    out = Array(np.maximum(a.data, 0))
    return _track(out, (a,), lambda g: ((a, g * (a.data > 0)),))


def exp(a) -> Array:
    a = _as_array(a)
    y = np.exp(a.data)
    out = Array(y)
    return _track(out, (a,), lambda g: ((a, g * y),))


def log(a) -> Array:
    a = _as_array(a)
    out = Array(np.log(a.data))
    return _track(out, (a,), lambda g: ((a, g / a.data),))


def sqrt(a) -> Array:
    a = _as_array(a)
    y = np.sqrt(a.data)
    out = Array(y)
    return _track(out, (a,), lambda g: ((a, g * 0.5 / y),))


def softmax(a: Array, axis: int = -1) -> Array:
    """Softmax along `axis`; tolerates -inf entries (fully masked rows error)."""
    a = _as_array(a)
    with np.errstate(invalid="ignore"):
        shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axis, keepdims=True)
    if not np.isfinite(y).all():
        raise ContractViolation("softmax over a fully masked axis produced non-finite values")
    out = Array(y)

    def vjp(g):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return ((a, y * (g - dot)),)

    return _track(out, (a,), vjp)


def log_softmax(a: Array, axis: int = -1) -> Array:
    a = _as_array(a)
    with np.errstate(invalid="ignore"):
        shifted = a.data - np.max(a.data, axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        y = shifted - lse
    if np.isnan(y).any():
        raise ContractViolation("log_softmax over a fully masked axis produced NaN")
    out = Array(y)

    def vjp(g):
        gsum = g.sum(axis=axis, keepdims=True)
        return ((a, g - np.exp(y) * gsum),)

    return _track(out, (a,), vjp)


def masked_fill(a: Array, mask: np.ndarray, value: float) -> Array:
    """Replace entries where `mask` is true by `value` (grad is zero there)."""
    a = _as_array(a)
    mask = np.asarray(mask, dtype=bool)
    out = Array(np.where(mask, np.asarray(value, dtype=a.dtype), a.data))

    def vjp(g):
        return ((a, _unbroadcast(np.where(mask, 0.0, g), a.shape)),)

    return _track(out, (a,), vjp)


# ---------------------------------------------------------------------------
# indexing


def gather_last(a: Array, idx: np.ndarray) -> Array:
    """Pick one entry along the last axis per leading position."""
    a = _as_array(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.shape != a.shape[:-1]:
        raise ShapeError(f"gather_last index shape {idx.shape} != leading shape {a.shape[:-1]}")
    out = Array(np.take_along_axis(a.data, idx[..., None], axis=-1)[..., 0])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, idx[..., None], g[..., None], axis=-1)
        return ((a, ga),)

    return _track(out, (a,), vjp)


def take_batch(a: Array, idx: np.ndarray) -> Array:
    """Gather whole leading-axis blocks: `a[(B, ...)][idx] -> (R, ...)`."""
    a = _as_array(a)
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError(f"take_batch expects a 1-D index, got shape {idx.shape}")
    out = Array(a.data[idx])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return ((a, ga),)

    return _track(out, (a,), vjp)


def take_rows(a: Array, idx: np.ndarray) -> Array:
    """`a[(B, n, d)][arange(B), idx] -> (B, d)` row selection per batch entry."""
    a = _as_array(a)
    idx = np.asarray(idx, dtype=np.int64)
    if a.ndim != 3 or idx.shape != (a.shape[0],):
        raise ShapeError(f"take_rows expects (B,n,d) and (B,) index, got {a.shape} / {idx.shape}")
    batch = np.arange(a.shape[0])
    out = Array(a.data[batch, idx])

    def vjp(g):
        ga = np.zeros_like(a.data)
        np.add.at(ga, (batch, idx), g)
        return ((a, ga),)

    return _track(out, (a,), vjp)


# ---------------------------------------------------------------------------
# composites


def linear(x: Array, w: Array, b: Array | None = None) -> Array:
    out = matmul(x, w)
    if b is not None:
        out = add(out, b)
    return out


def normalize_rows(x: Array, gain: Array, bias: Array, eps: float = 1e-5) -> Array:
    """Per-row normalization over the last (embedding) axis with affine rescale.

    Batch-size independent by construction, unlike batch normalization.
    """
    mu = amean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = amean(mul(xc, xc), axis=-1, keepdims=True)
    inv = div(1.0, sqrt(add(var, eps)))
    return add(mul(mul(xc, inv), gain), bias)


def swap_last(a: Array) -> Array:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def scaled_dot_attention(q: Array, k: Array, v: Array, mask: np.ndarray | None = None) -> Array:
    """softmax(q kᵀ / sqrt(dk)) v with optional boolean mask over keys."""
    dk = q.shape[-1]
    scores = mul(matmul(q, swap_last(k)), 1.0 / np.sqrt(dk))
    if mask is not None:
        scores = masked_fill(scores, mask, -np.inf)
    return matmul(softmax(scores, axis=-1), v)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(tape: Tape, loss: Array, params: Mapping[str, Array] | None = None) -> dict[str, np.ndarray]:
    """Propagate d(loss)/d(param) through `tape`, once.

    Returns a name -> gradient map for `params`; parameters that do not reach
    the loss get a zero gradient.  Also populates `.grad` on every tracked
    leaf encountered.
    """
    if tape._spent:
        raise TapeError("backward called twice on one tape")
    tape._spent = True
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape._nodes):
        g = grads.pop(id(node), None)
        if g is None or node._vjp is None:
            continue
        for parent, pg in node._vjp(g):
            if not parent._tracked:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg.copy() if acc is None else acc + pg
            if parent._vjp is None:  # leaf
                parent.grad = grads[id(parent)]

    out: dict[str, np.ndarray] = {}
    if params is not None:
        for name, p in params.items():
            out[name] = grads.get(id(p), np.zeros_like(p.data))
            p.grad = out[name]
    return out


@dataclass
class GradCheckEntry:
    max_rel_err: float
    analytic_finite: bool

    @property
    def passed(self) -> bool:  # pragma: no cover - trivial
        return self.analytic_finite and np.isfinite(self.max_rel_err)


def finite_difference_gradients(fn, params: Mapping[str, Array], step: float = 1e-3) -> dict[str, np.ndarray]:
    """Central finite differences of the scalar `fn(params)` per parameter entry."""

    def value() -> float:
        return float(fn(params).item())

    out = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        g = np.empty_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + step
            fp = value()
            flat[i] = keep - step
            fm = value()
            flat[i] = keep
            g[i] = (fp - fm) / (2.0 * step)
        out[name] = g.reshape(p.shape)
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Worst-case |a - n| relative to the larger magnitude in the tensor."""
    diff = float(np.max(np.abs(analytic - numeric)))
    scale = max(float(np.max(np.abs(analytic))), float(np.max(np.abs(numeric))), floor)
    return diff / scale


def gradient_check(fn, params: Mapping[str, Array], tol: float = 1e-4, step: float = 1e-3) -> dict[str, GradCheckEntry]:
    """Compare analytic gradients of scalar `fn` against central differences.

    Runs in a float64 shadow copy of `params`.  A non-finite analytic gradient
    is reported as a failure, never silently passed.
    """
    shadow = {
        name: Array(np.asarray(p.data, dtype=np.float64).copy(), requires_grad=True, name=name)
        for name, p in params.items()
    }
    with Tape() as tape:
        loss = fn(shadow)
    analytic = backward(tape, loss, shadow)
    numeric = finite_difference_gradients(fn, shadow, step=step)

    report = {}
    for name in shadow:
        a, n = analytic[name], numeric[name]
        if not np.isfinite(a).all():
            report[name] = GradCheckEntry(max_rel_err=np.inf, analytic_finite=False)
        else:
            report[name] = GradCheckEntry(max_rel_err=max_relative_error(a, n), analytic_finite=True)
    return report


def check_passed(report: Mapping[str, GradCheckEntry], tol: float = 1e-4) -> bool:
    return all(e.analytic_finite and e.max_rel_err < tol for e in report.values())
