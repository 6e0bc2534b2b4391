"""MLP generator and discriminator built on the tape.

Parameters live on the model as plain arrays. Each pass binds them to a tape
with :meth:`Mlp.bind`, which returns the leaf vars whose gradients the trainer
reads back from the :class:`~fusedprop.autograd.GradStore`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .errors import ConfigError, DegenerateNormError, DimensionError
from .tensor import Rng, resolve_dtype

ACTIVATIONS = {
    "relu": ag.relu,
    "leaky_relu": ag.leaky_relu,
    "tanh": ag.tanh,
}


@dataclass
class MlpSpec:
    widths: tuple[int, ...]
    activation: str = "relu"
    spectral: bool | tuple[bool, ...] = False
    n_power_iterations: int = 1

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) < 3:
            raise ConfigError(f"architecture {self.arch} needs at least one hidden layer")
        if any(w <= 0 for w in self.widths):
            raise ConfigError(f"architecture {self.arch} has a non-positive width")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}")
        if isinstance(self.spectral, bool):
            self.spectral = (self.spectral,) * (len(self.widths) - 1)
        if len(self.spectral) != len(self.widths) - 1:
            raise ConfigError("need one spectral flag per layer")

    @classmethod
    def parse(cls, arch: str, **kw) -> "MlpSpec":
        try:
            widths = [int(w) for w in arch.split("-")]
        except ValueError:
            raise ConfigError(f"bad architecture string {arch!r}; expected e.g. 2-64-64-2") from None
        return cls(tuple(widths), **kw)

    @property
    def arch(self) -> str:
        return "-".join(map(str, self.widths))


def power_iteration(w: np.ndarray, u: np.ndarray, n: int):
    """Run ``n`` rounds of v = W^T u / |.|, u = W v / |.|.

    Returns (sigma, u, v) with sigma = u^T W v.
    """
    v = None
    for _ in range(n):
        v = w.T @ u
        nv = np.linalg.norm(v)
        if nv == 0:
            raise DegenerateNormError("power iteration hit a zero vector; weight matrix is degenerate")
        v = v / nv
        u = w @ v
        nu = np.linalg.norm(u)
        if nu == 0:
            raise DegenerateNormError("power iteration hit a zero vector; weight matrix is degenerate")
        u = u / nu
    if v is None:
        v = w.T @ u
        v = v / np.linalg.norm(v)
    return float(u @ (w @ v)), u, v


@dataclass
class SpectralState:
    u: np.ndarray
    n_power_iterations: int = 1
    sigma: float = field(default=float("nan"))

    def update(self, w: np.ndarray, n: int | None = None) -> float:
        if not np.any(w):
            raise DegenerateNormError("spectral norm of an all-zero weight matrix")
        self.sigma, self.u, _ = power_iteration(w, self.u, n or self.n_power_iterations)
        return self.sigma


class Linear:
    def __init__(self, fan_in: int, fan_out: int, rng: Rng, dtype, spectral: SpectralState | None = None):
        std = np.sqrt(2.0 / fan_in)
        self.W = (rng.normal((fan_out, fan_in)) * std).astype(dtype)
        self.b = np.zeros(fan_out, dtype=dtype)
        self.spectral = spectral

    def forward(self, x: ag.Var, w: ag.Var, b: ag.Var, grad_scale=None, power_iterations=None):
        if self.spectral is not None:
            if power_iterations != 0:
                self.spectral.update(self.W.astype(np.float64), power_iterations)
            # sigma is a differentiation constant
            w = ag.scale(w, 1.0 / self.spectral.sigma)
        return ag.linear(x, w, b, grad_scale)

    def effective_weight(self) -> np.ndarray:
        if self.spectral is None:
            return self.W
        return self.W / self.spectral.sigma


class Mlp:
    """Feed-forward stack: linear, activation, ..., linear (no output activation).

    With ``invfusedprop=True`` every linear layer takes the model's
    per-sample gradient scale so parameter gradients are pre-scaled.
    Activations carry no parameters and pass gradients through unscaled.
    """

    def __init__(self, spec: MlpSpec, rng: Rng, dtype="f64", invfusedprop: bool = False):
        self.spec = spec
        self.dtype = resolve_dtype(dtype)
        self.invfusedprop = invfusedprop
        self.layers = []
        for (fi, fo), sn in zip(zip(spec.widths[:-1], spec.widths[1:]), spec.spectral):
            layer = Linear(fi, fo, rng, self.dtype)
            if sn:
                u = rng.normal((fo,))
                layer.spectral = SpectralState(u / np.linalg.norm(u), spec.n_power_iterations)
            self.layers.append(layer)
        self._act = ACTIVATIONS[spec.activation]

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out

    def set_params(self, values) -> None:
        values = list(values)
        for i, layer in enumerate(self.layers):
            layer.W, layer.b = values[2 * i], values[2 * i + 1]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def bind(self, tape: ag.Tape, requires_grad: bool = True) -> list[ag.Var]:
        if requires_grad:
            return [tape.leaf(p) for p in self.params]
        return [tape.constant(p) for p in self.params]

    def forward(self, x: ag.Var, bound: list[ag.Var], grad_scale=None, power_iterations=None) -> ag.Var:
        if grad_scale is not None and not self.invfusedprop:
            raise ConfigError("gradient pre-scaling needs a model built with invfusedprop=True")
        if x.shape[-1] != self.spec.widths[0]:
            raise DimensionError(f"input width {x.shape[-1]} != {self.spec.widths[0]}")
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            h = layer.forward(h, bound[2 * i], bound[2 * i + 1], grad_scale, power_iterations)
            if i != last:
                h = self._act(h)
        return h

    def __call__(self, x: np.ndarray) -> np.ndarray:
        """Plain evaluation without recording gradients."""
        tape = ag.Tape()
        out = self.forward(tape.constant(x), self.bind(tape, False)).value
        tape.release()
        return out


def build_generator(spec: MlpSpec | str, rng: Rng, dtype="f64") -> Mlp:
    if isinstance(spec, str):
        spec = MlpSpec.parse(spec, activation="relu")
    return Mlp(spec, rng, dtype)


def build_discriminator(spec: MlpSpec | str, rng: Rng, dtype="f64", invfusedprop: bool = False) -> Mlp:
    if isinstance(spec, str):
        spec = MlpSpec.parse(spec, activation="leaky_relu")
    if spec.widths[-1] != 1:
        raise ConfigError(f"discriminator must end in width 1, got {spec.arch}")
    return Mlp(spec, rng, dtype, invfusedprop=invfusedprop)
