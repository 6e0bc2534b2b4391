"""GAN losses and their per-sample gradient scaling factors.

Every loss is a function of the discriminator output ``y``. Each entry gives
the real-branch and fake-branch discriminator losses, the generator loss, and
the two scaling factors

    lam(y)     = L_G'(y) / L_D'(y)      (generator gradient from D's backward)
    lam_inv(y) = L_D'(y) / L_G'(y)      (discriminator gradient from G's backward)

The loss formulas are written once against a kernel namespace ``F`` so the
same lambda evaluates on plain arrays (``fusedprop.tensor``) or records onto a
tape (``fusedprop.autograd``). The derivatives ``d_fake``/``d_gen`` are
hand-written closed forms kept apart from the autodiff engine so they can act
as an independent oracle.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import tensor as T
from .errors import ConfigError, SingularScaleError, UnsupportedLambdaError

SINGULAR_TOL = 1e-8


@dataclass(frozen=True)
class LossSpec:
    name: str
    l_d_real: Callable
    l_d_fake: Callable
    l_g: Callable
    d_fake: Callable[[np.ndarray], np.ndarray]
    d_gen: Callable[[np.ndarray], np.ndarray]
    lam: Callable[[np.ndarray], np.ndarray] | None
    lam_inv: Callable[[np.ndarray], np.ndarray]
    lam_pole: float | None = None
    lam_inv_pole: float | None = None
    kinks: tuple[float, ...] = ()

    @property
    def has_lambda(self) -> bool:
        return self.lam is not None


def _sig(y):
    return T.sigmoid(y)


LOSSES: dict[str, LossSpec] = {
    "minimax": LossSpec(
        name="minimax",
        l_d_real=lambda y, F: F.softplus(-y),
        l_d_fake=lambda y, F: F.softplus(y),
        l_g=lambda y, F: -F.softplus(y),
        d_fake=_sig,
        d_gen=lambda y: -_sig(y),
        lam=lambda y: np.full_like(y, -1.0),
        lam_inv=lambda y: np.full_like(y, -1.0),
    ),
    "nonsaturating": LossSpec(
        name="nonsaturating",
        l_d_real=lambda y, F: F.softplus(-y),
        l_d_fake=lambda y, F: F.softplus(y),
        l_g=lambda y, F: F.softplus(-y),
        d_fake=_sig,
        d_gen=lambda y: -_sig(-y),
        lam=lambda y: -np.exp(-y),
        lam_inv=lambda y: -np.exp(y),
    ),
    "wasserstein": LossSpec(
        name="wasserstein",
        l_d_real=lambda y, F: -y,
        l_d_fake=lambda y, F: y,
        l_g=lambda y, F: -y,
        d_fake=lambda y: np.ones_like(y),
        d_gen=lambda y: -np.ones_like(y),
        lam=lambda y: np.full_like(y, -1.0),
        lam_inv=lambda y: np.full_like(y, -1.0),
    ),
    "least_squares": LossSpec(
        name="least_squares",
        l_d_real=lambda y, F: F.square(y - 1),
        l_d_fake=lambda y, F: F.square(y),
        l_g=lambda y, F: F.square(y - 1),
        d_fake=lambda y: 2 * y,
        d_gen=lambda y: 2 * (y - 1),
        lam=lambda y: 1 - 1 / y,
        lam_inv=lambda y: y / (y - 1),
        lam_pole=0.0,
        lam_inv_pole=1.0,
    ),
    "hinge": LossSpec(
        name="hinge",
        l_d_real=lambda y, F: F.relu(1 - y),
        l_d_fake=lambda y, F: F.relu(y + 1),
        l_g=lambda y, F: -y,
        d_fake=lambda y: T.heaviside(y + 1),
        d_gen=lambda y: -np.ones_like(y),
        lam=None,
        lam_inv=lambda y: -T.heaviside(y + 1),
        kinks=(-1.0, 1.0),
    ),
}

ALIASES = {"ns": "nonsaturating", "ls": "least_squares", "wgan": "wasserstein"}
CLI_NAMES = ("minimax", "ns", "wasserstein", "ls", "hinge")


def get_loss(name: str | LossSpec) -> LossSpec:
    if isinstance(name, LossSpec):
        return name
    key = ALIASES.get(name, name)
    try:
        return LOSSES[key]
    except KeyError:
        raise ConfigError(f"unknown loss {name!r}; choose from {', '.join(CLI_NAMES)}") from None


def eval_losses(spec, y_real, y_fake):
    """Per-sample (L_D^R, L_D, L_G); the caller reduces."""
    spec = get_loss(spec)
    y_real, y_fake = np.asarray(y_real), np.asarray(y_fake)
    return spec.l_d_real(y_real, T), spec.l_d_fake(y_fake, T), spec.l_g(y_fake, T)


def _check_pole(y, pole, code):
    if pole is None:
        return
    near = np.flatnonzero(np.abs(y - pole) < SINGULAR_TOL)
    if near.size:
        i = int(near[0])
        raise SingularScaleError(code, i, float(y[i]))


def lambda_of(spec, y_fake) -> np.ndarray:
    spec = get_loss(spec)
    if spec.lam is None:
        raise UnsupportedLambdaError(spec.name)
    y = np.atleast_1d(np.asarray(y_fake))
    _check_pole(y, spec.lam_pole, "SINGULAR_LAMBDA")
    return spec.lam(y)


def lambda_inv_of(spec, y_fake) -> np.ndarray:
    spec = get_loss(spec)
    y = np.atleast_1d(np.asarray(y_fake))
    _check_pole(y, spec.lam_inv_pole, "SINGULAR_LAMBDA_INV")
    return spec.lam_inv(y)


def _rel(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    den = np.maximum(np.abs(a), np.abs(b))
    err = np.where(den > 0, np.abs(a - b) / np.where(den > 0, den, 1.0), 0.0)
    return float(err.max()) if err.size else 0.0


@dataclass
class ScalingReport:
    loss: str
    samples: int
    lambda_err: float | None
    lambda_inv_err: float
    product_err: float | None

    @property
    def worst(self) -> float:
        errs = [e for e in (self.lambda_err, self.lambda_inv_err, self.product_err) if e is not None]
        return max(errs)


def sample_regular_points(spec, samples, rng, low=-5.0, high=5.0, margin=1e-3):
    """Uniform draws on [low, high] away from the loss's poles and kinks."""
    spec = get_loss(spec)
    avoid = [p for p in (spec.lam_pole, spec.lam_inv_pole) if p is not None] + list(spec.kinks)
    out = np.empty(0)
    while out.size < samples:
        y = np.asarray(rng.uniform(low, high, samples), dtype=np.float64)
        for p in avoid:
            y = y[np.abs(y - p) >= margin]
        out = np.concatenate([out, y])
    return out[:samples]


def verify_scaling_identity(spec, samples: int, rng) -> ScalingReport:
    """Check lam * L_D' == L_G' and lam_inv * L_G' == L_D' on sampled outputs."""
    spec = get_loss(spec)
    if samples < 1:
        raise ConfigError("need at least one sample")
    y = sample_regular_points(spec, samples, rng)
    dd, dg = spec.d_fake(y), spec.d_gen(y)
    lam_inv = spec.lam_inv(y)
    lam_inv_err = _rel(lam_inv * dg, dd)
    lam_err = prod_err = None
    if spec.lam is not None:
        lam = spec.lam(y)
        lam_err = _rel(lam * dd, dg)
        nz = (lam != 0) & (lam_inv != 0)
        prod_err = _rel(lam[nz] * lam_inv[nz], np.ones(nz.sum()))
    return ScalingReport(spec.name, samples, lam_err, lam_inv_err, prod_err)
