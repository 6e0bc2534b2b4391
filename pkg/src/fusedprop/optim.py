"""SGD and bias-corrected Adam over lists of arrays.

``sgd_step`` and ``adam_step`` are pure and return new arrays. The
:class:`Optimizer` used by the trainer runs the same kernels in place with a
reusable workspace; allocation of large temporaries otherwise dominates the
update cost at benchmark widths. Both routes share the kernels, so they agree
bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, DivergenceError


def _check_shapes(params, grads):
    if len(params) != len(grads):
        raise DimensionError(f"{len(params)} parameters but {len(grads)} gradients")
    for k, (p, g) in enumerate(zip(params, grads)):
        if p.shape != g.shape:
            raise DimensionError(f"parameter {k}: shape {p.shape} vs gradient {g.shape}")


def _apply(p, step, k, iteration):
    # a non-finite gradient always yields a non-finite step
    if not np.isfinite(step.sum()):
        raise DivergenceError(f"non-finite gradient in parameter {k}", iteration or 0)
    p -= step


def _sgd_(p, g, lr, work, k, iteration):
    np.multiply(g, p.dtype.type(lr), out=work)
    _apply(p, work, k, iteration)


def _adam_(p, g, m, v, lr, t, beta1, beta2, eps, work, k, iteration):
    ty = p.dtype.type
    if beta1 == 0.0:
        np.copyto(m, g)
    else:
        m *= ty(beta1)
        np.multiply(g, ty(1 - beta1), out=work)
        m += work
    np.multiply(g, g, out=work)
    work *= ty(1 - beta2)
    v *= ty(beta2)
    v += work
    np.divide(v, ty(1.0 - beta2 ** t), out=work)
    np.sqrt(work, out=work)
    work += ty(eps)
    np.divide(m, work, out=work)
    work *= ty(lr / (1.0 - beta1 ** t))
    _apply(p, work, k, iteration)


def sgd_step(params, grads, lr, iteration=None):
    _check_shapes(params, grads)
    out = [p.copy() for p in params]
    for k, (p, g) in enumerate(zip(out, grads)):
        _sgd_(p, g, lr, np.empty_like(p), k, iteration)
    return out


@dataclass
class AdamMoments:
    m: list
    v: list

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, lr, moments: AdamMoments, t: int,
              beta1=0.0, beta2=0.9, eps=1e-8, iteration=None):
    """One Adam update: m-hat / (sqrt(v-hat) + eps) scaled by ``lr``."""
    if t < 1:
        raise ValueError("Adam step counter starts at 1")
    _check_shapes(params, grads)
    out = [p.copy() for p in params]
    m = [a.copy() for a in moments.m]
    v = [a.copy() for a in moments.v]
    for k in range(len(out)):
        _adam_(out[k], grads[k], m[k], v[k], lr, t, beta1, beta2, eps,
               np.empty_like(out[k]), k, iteration)
    return out, AdamMoments(m, v)


class Optimizer:
    """One parameter group updated in place."""

    def __init__(self, kind: str, lr: float, beta1=0.0, beta2=0.9, eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind, self.lr = kind, lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.moments = None
        self._work = None
        self.t = 0

    def step(self, params, grads, iteration=None):
        """Update ``params`` in place and return them."""
        _check_shapes(params, grads)
        if self._work is None:
            self._work = [np.empty_like(p) for p in params]
        if self.kind == "sgd":
            for k, (p, g) in enumerate(zip(params, grads)):
                _sgd_(p, g, self.lr, self._work[k], k, iteration)
            return params
        if self.moments is None:
            self.moments = AdamMoments.zeros_like(params)
        self.t += 1
        for k, (p, g) in enumerate(zip(params, grads)):
            _adam_(p, g, self.moments.m[k], self.moments.v[k], self.lr, self.t,
                   self.beta1, self.beta2, self.eps, self._work[k], k, iteration)
        return params
