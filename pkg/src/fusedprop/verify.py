"""Gradient checks used by ``fusedprop gradcheck`` and the test-suite.

Three independent routes:

* central differences against the tape for every differentiable op, every
  loss and both model builders;
* fused gradients against the two explicit backward passes at the same
  parameters and the same latent batch;
* the scaling-factor identities against hand-derived loss derivatives.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import finite_difference_check
from .losses import CLI_NAMES, LOSSES, get_loss, verify_scaling_identity
from .nn import build_discriminator, build_generator
from .tensor import Rng
from .train import TrainConfig, TrainState, d_pass, fused_pass, g_pass, invfused_pass


def max_rel_err(a, b, floor: float = 1e-8) -> float:
    """Worst elementwise |a - b| / max(|a|, |b|, floor) over paired tensors."""
    worst = 0.0
    for x, y in zip(a, b):
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
        den = np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if x.size:
            worst = max(worst, float(np.max(np.abs(x - y) / den)))
    return worst


def exactness(config: TrainConfig, x=None, z=None, state: TrainState | None = None) -> dict:
    """Fused gradients vs the two explicit passes at identical (D, G, x, z).

    Returns relative errors for both parameter groups plus the raw gradients.
    """
    config.validate()
    if config.mode not in ("fusedprop", "invfusedprop"):
        raise ValueError("exactness compares a fused mode against the two-pass reference")
    state = state or TrainState.create(config)
    x = state.draw_x() if x is None else x
    z = state.draw_z() if z is None else z
    run = fused_pass if config.mode == "fusedprop" else invfused_pass
    fused = run(state, x, z)
    ref_d = d_pass(state, x, z)
    ref_g = g_pass(state, z)
    return {
        "g": max_rel_err(fused.g_grads, ref_g.g_grads),
        "d": max_rel_err(fused.d_grads, ref_d.d_grads),
        "fused": fused,
        "ref_d": ref_d.d_grads,
        "ref_g": ref_g.g_grads,
        "y_fake": fused.y_fake,
    }


# finite differences

def _away(rng: np.random.Generator, shape, margin=1e-2, points=()):
    """Normal draws kept at least ``margin`` from each kink location."""
    v = rng.standard_normal(shape)
    for p in points:
        close = np.abs(v - p) < margin
        v[close] += np.where(v[close] >= p, margin, -margin) * 2
    return v


def _op_cases(rng):
    """(name, function of leaves, parameter arrays) triples for one random point."""
    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    m = rng.standard_normal((4, 5))
    bias = rng.standard_normal(4)
    w = rng.standard_normal((5, 4))
    wb = rng.standard_normal(5)
    k = _away(rng, (3, 4), points=(0.0,))
    c = rng.standard_normal((3, 4))
    c5 = rng.standard_normal((3, 5))
    lam = np.ones(3)

    def dot(v, coef):
        return ag.sum(ag.mul(v, v.tape.constant(coef)))

    return [
        ("add", lambda p, q: dot(p + q, c), [a, b]),
        ("add_bias", lambda p, q: dot(p + q, c), [a, bias]),
        ("sub", lambda p, q: dot(p - q, c), [a, b]),
        ("mul", lambda p, q: dot(p * q, c), [a, b]),
        ("scale", lambda p: dot(ag.scale(p, -1.7), c), [a]),
        ("neg", lambda p: dot(-p, c), [a]),
        ("square", lambda p: dot(ag.square(p), c), [a]),
        ("exp", lambda p: dot(ag.exp(p), c), [a]),
        ("softplus", lambda p: dot(ag.softplus(p), c), [a * 3]),
        ("relu", lambda p: dot(ag.relu(p), c), [k]),
        ("leaky_relu", lambda p: dot(ag.leaky_relu(p), c), [k]),
        ("tanh", lambda p: dot(ag.tanh(p), c), [a]),
        ("matmul", lambda p, q: dot(p @ q, c5), [a, m]),
        ("linear", lambda p, q, r: dot(ag.linear(p, q, r), c5), [a, w, wb]),
        ("linear_prescaled", lambda p, q, r: dot(ag.linear(p, q, r, ag.GradScale(lam)), c5), [a, w, wb]),
        ("sum", lambda p: ag.sum(ag.square(p)), [a]),
        ("mean", lambda p: ag.mean(ag.square(p)), [a]),
        ("reshape", lambda p: dot(ag.reshape(p, (4, 3)), c.reshape(4, 3)), [a]),
        ("concat", lambda p, q: dot(ag.concat([p, q]), np.concatenate([c, c[::-1]])), [a, b]),
        ("rows", lambda p: dot(p[1:3], c[:2]), [a]),
        ("grad_reversal", lambda p: dot(ag.grad_reversal(p, 1.0), c), [a]),
        ("fusedprop_boundary", lambda p: dot(ag.fusedprop_boundary(p, lam), c), [a]),
    ]


def _loss_cases(rng):
    out = []
    for name, spec in LOSSES.items():
        y = _away(rng, (6,), margin=1e-2, points=spec.kinks) * 2
        c = rng.standard_normal(6)
        for part in ("l_d_real", "l_d_fake", "l_g"):
            fn = getattr(spec, part)
            out.append((f"{name}.{part}", lambda p, fn=fn, c=c: ag.sum(ag.mul(fn(p, ag), p.tape.constant(c))), [y]))
    return out


def _min_preactivation(model, x) -> float:
    h = x
    low = np.inf
    for i, layer in enumerate(model.layers):
        h = h @ layer.W.T + layer.b
        if i != len(model.layers) - 1:
            low = min(low, float(np.abs(h).min()))
            h = np.where(h > 0, h, h * (0.2 if model.spec.activation == "leaky_relu" else 0.0))
    return low


def _model_case(kind, rng, seed, arch, margin=3e-3, batch=3):
    """A random model and input whose hidden units all sit clear of the kink."""
    while True:
        r = Rng(seed)
        model = build_generator(arch, r) if kind == "generator" else build_discriminator(arch, r)
        for layer in model.layers:
            layer.b = rng.standard_normal(layer.b.shape) * 0.1
        x = rng.standard_normal((batch, model.spec.widths[0]))
        if _min_preactivation(model, x) > margin:
            break
        seed += 1
    c = rng.standard_normal((batch, model.spec.widths[-1]))

    def f(*params):
        tape = params[0].tape
        out = model.forward(tape.constant(x), list(params))
        return ag.sum(ag.mul(out, tape.constant(c)))

    return model, f


def fd_suite(points: int = 100, seed: int = 0, h: float = 1e-4, arch_g="2-16-16-2",
             arch_d="2-16-16-1", model_coords: int | None = None) -> dict[str, float]:
    """Worst central-difference relative error per op, loss part and model builder."""
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for p in range(points):
        for name, f, params in _op_cases(rng) + _loss_cases(rng):
            e = finite_difference_check(f, params, h=h)
            worst[name] = max(worst.get(name, 0.0), e)
        for kind, arch in (("generator", arch_g), ("discriminator", arch_d)):
            model, f = _model_case(kind, rng, seed * 100003 + p, arch)
            e = finite_difference_check(f, model.params, h=h, coords=model_coords, rng=rng)
            worst[f"build_{kind}"] = max(worst.get(f"build_{kind}", 0.0), e)
    return worst


def hinge_dead_zone_state(config: TrainConfig, z, frac: float = 0.5) -> TrainState:
    """Shift D's output bias so about ``frac`` of fake outputs fall below -1."""
    state = TrainState.create(config)
    y = state.D(state.G(z)).reshape(-1)
    shift = -1.0 - np.quantile(y, frac)
    state.D.layers[-1].b = state.D.layers[-1].b + shift
    return state


def scaling_suite(samples: int = 10_000, seed: int = 0) -> dict[str, object]:
    rng = Rng(seed)
    return {name: verify_scaling_identity(get_loss(name), samples, rng) for name in CLI_NAMES}
