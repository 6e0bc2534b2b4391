"""Tape-based reverse-mode differentiation.

A :class:`Tape` records one forward pass as an append-only list of nodes. Each
node keeps its input vars and a backward closure holding exactly the forward
values its rule reads. :func:`backward` sweeps the tape once in reverse id
order and returns a :class:`GradStore` with the gradient of every reachable
leaf.

Nodes whose inputs all have ``requires_grad=False`` record no closure, so
constant sub-graphs (the generator in the discriminator's pass, the frozen
discriminator in the generator's pass) cost nothing at backward time.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .errors import ContractError, DimensionError, NumericError, OracleError, TapeReuseError

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Var:
    __slots__ = ("tape", "id", "value", "requires_grad")

    def __init__(self, tape: "Tape", id: int, value: np.ndarray, requires_grad: bool):
        self.tape = tape
        self.id = id
        self.value = value
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        return f"Var(id={self.id}, shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        if not isinstance(key, slice):
            raise ContractError("only row slices are supported")
        start, stop, step = key.indices(self.shape[0])
        if step != 1:
            raise ContractError("only contiguous row slices are supported")
        return rows(self, start, stop)


class Tape:
    """Record of one pass. ``promote`` casts every leaf and constant to that dtype."""

    def __init__(self, promote=None):
        self.promote = promote
        self._fns: list[tuple[tuple[Var, ...], BackwardFn] | None] = []
        self._leaves: set[int] = set()
        self.consumed = False

    def __len__(self):
        return len(self._fns)

    def release(self) -> None:
        """Drop recorded closures; vars point back at the tape, so this breaks the cycle."""
        self._fns = []
        self._leaves = set()
        self.consumed = True

    def _new(self, value, requires_grad, entry) -> Var:
        if self.consumed:
            raise TapeReuseError("tape already swept by backward; record a new pass")
        v = Var(self, len(self._fns), value, requires_grad)
        self._fns.append(entry)
        return v

    def _cast(self, value) -> np.ndarray:
        value = np.asarray(value)
        if self.promote is not None and value.dtype.kind == "f":
            value = value.astype(self.promote)
        return value

    def leaf(self, value, requires_grad: bool = True) -> Var:
        v = self._new(self._cast(value), requires_grad, None)
        if requires_grad:
            self._leaves.add(v.id)
        return v

    def constant(self, value) -> Var:
        return self._new(self._cast(value), False, None)

    def record(self, value: np.ndarray, inputs: tuple[Var, ...], fn: BackwardFn) -> Var:
        for v in inputs:
            if v.tape is not self:
                raise ContractError("operands belong to different tapes")
        rg = any(v.requires_grad for v in inputs)
        return self._new(value, rg, (inputs, fn) if rg else None)


class GradStore(dict):
    """Leaf id -> gradient. A missing entry means the leaf was unreachable."""

    def of(self, v: Var) -> np.ndarray | None:
        return self.get(v.id)


def backward(tape: Tape, root: Var) -> GradStore:
    if root.tape is not tape:
        raise ContractError("root does not belong to this tape")
    if root.value.size != 1 or root.value.ndim > 1:
        raise ContractError(f"backward needs a scalar root, got shape {root.shape}")
    if tape.consumed:
        raise TapeReuseError("tape already swept by backward")
    tape.consumed = True

    grads: dict[int, np.ndarray] = {root.id: np.ones_like(root.value)}
    fns = tape._fns
    for nid in range(root.id, -1, -1):
        g = grads.get(nid)
        if g is None:
            continue
        entry = fns[nid]
        if entry is None:
            continue
        del grads[nid]
        inputs, fn = entry
        for v, gi in zip(inputs, fn(g)):
            if gi is None or not v.requires_grad:
                continue
            prev = grads.get(v.id)
            grads[v.id] = gi if prev is None else prev + gi
    store = GradStore()
    for nid in sorted(grads):
        if nid in tape._leaves:
            store[nid] = grads[nid]
    tape.release()
    return store


def grad(f: Callable[..., Var], *values, dtype=None) -> list[np.ndarray]:
    """Gradients of scalar ``f(*leaves)`` at ``values`` (zeros where unreachable)."""
    tape = Tape()
    leaves = [tape.leaf(np.asarray(v, dtype=dtype)) for v in values]
    store = backward(tape, f(*leaves))
    return [store.get(v.id, np.zeros_like(v.value)) for v in leaves]


def _lift(x, like: Var) -> Var:
    if isinstance(x, Var):
        return x
    return like.tape.constant(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _check_broadcast(a: Var, b: Var) -> None:
    # equal shapes, scalars, or a trailing-feature bias onto a batch
    if a.shape == b.shape or a.value.ndim == 0 or b.value.ndim == 0:
        return
    if a.value.ndim == 2 and b.shape == a.shape[1:]:
        return
    if b.value.ndim == 2 and a.shape == b.shape[1:]:
        return
    raise DimensionError(f"cannot combine shapes {a.shape} and {b.shape}")


# elementwise

def add(a: Var, b) -> Var:
    b = _lift(b, a)
    _check_broadcast(a, b)
    return a.tape.record(
        a.value + b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(g, b.shape) if b.requires_grad else None,
        ),
    )


def sub(a: Var, b) -> Var:
    b = _lift(b, a)
    _check_broadcast(a, b)
    return a.tape.record(
        a.value - b.value,
        (a, b),
        lambda g: (
            _unbroadcast(g, a.shape) if a.requires_grad else None,
            _unbroadcast(-g, b.shape) if b.requires_grad else None,
        ),
    )


def mul(a: Var, b) -> Var:
    if not isinstance(b, Var):
        return scale(a, b)
    _check_broadcast(a, b)
    av, bv = a.value, b.value

    def fn(g):
        ga = _unbroadcast(g * bv, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * av, b.shape) if b.requires_grad else None
        return ga, gb

    return a.tape.record(av * bv, (a, b), fn)


def scale(a: Var, c: float) -> Var:
    c = a.dtype.type(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,))


def neg(a: Var) -> Var:
    return a.tape.record(-a.value, (a,), lambda g: (-g,))


def square(a: Var) -> Var:
    av = a.value
    return a.tape.record(av * av, (a,), lambda g: (g * (av + av),))


def exp(a: Var) -> Var:
    out = np.exp(a.value)
    return a.tape.record(out, (a,), lambda g: (g * out,))


def softplus(a: Var) -> Var:
    x = a.value
    return a.tape.record(T.softplus(x), (a,), lambda g: (g * T.sigmoid(x),))


def relu(a: Var) -> Var:
    mask = a.value > 0  # zero subgradient at the kink
    return a.tape.record(np.where(mask, a.value, 0).astype(a.dtype), (a,), lambda g: (g * mask,))


def leaky_relu(a: Var, slope: float = 0.2) -> Var:
    x = a.value
    d = np.where(x > 0, 1, slope).astype(a.dtype)
    return a.tape.record(x * d, (a,), lambda g: (g * d,))


def tanh(a: Var) -> Var:
    out = np.tanh(a.value)
    return a.tape.record(out, (a,), lambda g: (g * (1 - out * out),))


# linear algebra

def matmul(a: Var, b: Var) -> Var:
    av, bv = a.value, b.value

    def fn(g):
        ga = g @ bv.T if a.requires_grad else None
        gb = av.T @ g if b.requires_grad else None
        return ga, gb

    return a.tape.record(T.matmul(av, bv), (a, b), fn)


def linear(x: Var, w: Var, b: Var, grad_scale: "GradScale | None" = None) -> Var:
    """Affine map ``x @ w.T + b`` for ``x`` of shape (batch, in).

    Saves ``x`` and ``w``. With ``grad_scale`` set, the parameter gradients
    are computed from the per-sample pre-scaled upstream gradient while the
    input gradient uses it unscaled (see :func:`invfusedprop_linear_backward`).
    """
    xv, wv = x.value, w.value
    if xv.ndim != 2 or wv.ndim != 2 or xv.shape[1] != wv.shape[1]:
        raise DimensionError(f"linear: input {xv.shape} does not fit weight {wv.shape}")
    if b.shape != (wv.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not fit weight {wv.shape}")

    def fn(gy):
        if grad_scale is None:
            gx = gy @ wv if x.requires_grad else None
            gw = gy.T @ xv if w.requires_grad else None
            gb = gy.sum(axis=0) if b.requires_grad else None
            return gx, gw, gb
        gx = gy @ wv if x.requires_grad else None
        if not (w.requires_grad or b.requires_grad):
            return gx, None, None
        scaled = gy * grad_scale.get(gy.shape[0])[:, None]
        return gx, scaled.T @ xv if w.requires_grad else None, scaled.sum(axis=0) if b.requires_grad else None

    return x.tape.record(xv @ wv.T + b.value, (x, w, b), fn)


def invfusedprop_linear_backward(x, w, gy, lambda_inv, need_x=True, need_params=True):
    """Linear-layer backward with per-sample parameter-gradient pre-scaling.

    The activation gradient ``gy @ w`` is left unscaled so the generator's
    gradient keeps flowing; only ``gW`` and ``gb`` see ``lambda_inv * gy``.
    :func:`linear` inlines the same three products when given a
    :class:`GradScale`.
    """
    if gy.shape[0] != lambda_inv.shape[0] or x.shape[0] != gy.shape[0]:
        raise DimensionError(
            f"batch mismatch: x {x.shape}, gy {gy.shape}, scale {lambda_inv.shape}"
        )
    _check_finite(lambda_inv, "inverse scaling factor")
    gx = gy @ w if need_x else None
    if not need_params:
        return gx, None, None
    scaled = gy * lambda_inv[:, None]
    return gx, scaled.T @ x, scaled.sum(axis=0)


# reductions and reshaping

def sum(a: Var) -> Var:
    shape = a.shape
    return a.tape.record(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))


def mean(a: Var) -> Var:
    shape, n = a.shape, a.value.size
    inv = a.dtype.type(1.0 / n)
    return a.tape.record(a.value.mean(), (a,), lambda g: (np.full(shape, g * inv, dtype=a.dtype),))


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return a.tape.record(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def concat(parts: Sequence[Var]) -> Var:
    """Stack along the leading (batch) axis."""
    sizes = [p.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def fn(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return parts[0].tape.record(np.concatenate([p.value for p in parts]), tuple(parts), fn)


def rows(a: Var, start: int, stop: int) -> Var:
    shape, dtype = a.shape, a.dtype

    def fn(g):
        full = np.zeros(shape, dtype=dtype)
        full[start:stop] = g
        return (full,)

    return a.tape.record(a.value[start:stop], (a,), fn)


def stop_gradient(a: Var) -> Var:
    return a.tape.constant(a.value)


# gradient scaling boundaries

def grad_reversal(x: Var, lambda_bar: float) -> Var:
    """Identity forward; backward multiplies the incoming gradient by ``lambda_bar``."""
    c = x.dtype.type(lambda_bar)
    return x.tape.record(x.value, (x,), lambda g: (g * c,))


class GradScale:
    """Per-sample gradient factors supplied after the forward pass.

    The scaling factors depend on the discriminator output, which does not
    exist yet when the boundary is recorded, so the node holds this slot and
    reads it during the backward sweep. Values are differentiation constants.
    """

    def __init__(self, values=None):
        self.values = None
        self._checked = None
        if values is not None:
            self.set(values)

    def set(self, values) -> None:
        self.values = np.asarray(values)
        self._checked = None

    def get(self, batch: int) -> np.ndarray:
        v = self.values
        if v is None:
            raise ContractError("gradient scale was never set before backward")
        if self._checked != batch:
            if v.ndim != 1 or v.shape[0] != batch:
                raise DimensionError(f"scale has shape {v.shape}, batch extent is {batch}")
            _check_finite(v, "scaling factor")
            self._checked = batch
        return v


def _check_finite(v: np.ndarray, what: str) -> None:
    bad = np.flatnonzero(~np.isfinite(v))
    if bad.size:
        i = int(bad[0])
        raise NumericError(f"non-finite {what} {v[i]!r} at sample {i}", sample=i)


def fusedprop_boundary(gz: Var, lam: "GradScale | np.ndarray") -> Var:
    """Identity forward; backward scales sample ``b``'s gradient by ``lam[b]``."""
    holder = lam if isinstance(lam, GradScale) else GradScale(lam)
    batch = gz.shape[0]
    if holder.values is not None:
        holder.get(batch)
    expand = (slice(None),) + (None,) * (gz.value.ndim - 1)

    def fn(g):
        s = holder.get(batch).astype(g.dtype, copy=False)
        return (g * s[expand],)

    return gz.tape.record(gz.value, (gz,), fn)


# oracle

def finite_difference_check(
    f: Callable[..., Var],
    params: Sequence[np.ndarray],
    h: float = 1e-4,
    coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-8,
    oracle_dtype=np.longdouble,
) -> float:
    """Worst relative error between central differences and :func:`backward`.

    ``f`` maps leaf vars to a scalar var. Relative error per coordinate is
    ``|fd - an| / max(|fd|, |an|, floor)``. With ``coords`` set, only that many
    randomly chosen coordinates per parameter are probed.

    The differences are evaluated in ``oracle_dtype`` (extended precision by
    default) so their roundoff stays far below the tolerance even where a
    gradient entry is tiny next to the function value. The analytic gradient
    is always taken in f64.
    """
    analytic = grad(f, *[np.array(p, dtype=np.float64) for p in params])
    params = [np.array(p, dtype=oracle_dtype) for p in params]

    def value(ps):
        tape = Tape(promote=oracle_dtype)
        out = f(*[tape.constant(p) for p in ps]).value.astype(oracle_dtype).reshape(())
        tape.release()
        return out

    base = value(params)
    if value(params) != base:
        raise OracleError("function is not deterministic; repeated evaluation differs")

    worst = 0.0
    for k, p in enumerate(params):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if coords is not None and coords < flat.size:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, coords, replace=False)
        an = analytic[k].reshape(-1)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = value(params)
            flat[i] = old - h
            fm = value(params)
            flat[i] = old
            fd = float((fp - fm) / (2 * oracle_dtype(h)))
            err = abs(fd - an[i]) / max(abs(fd), abs(an[i]), floor)
            worst = max(worst, err)
    return worst
