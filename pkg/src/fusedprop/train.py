"""Training schedules: alternating, two-pass simultaneous, fused and inverted fused.

One iteration of each mode, with ``B`` the batch size:

conventional
    D pass on (x, G(z)) with G frozen, update D; redraw z (unless
    ``reuse_z``); G pass through the *updated* D, update G.
simgd2pass
    Both gradients at the current (D, G) with one shared z from two separate
    backward passes, then both updates.
fusedprop
    One forward of D over (x, boundary(G(z))) and one backward of
    mean(L_D^R + L_D). The boundary scales sample b's gradient by lam(y_b),
    so G receives exactly the generator-loss gradient.
invfusedprop
    One forward and one backward of mean(L_D^R) + mean(L_G). D's linear layers
    pre-scale their parameter gradients per sample by [1]*B + lam_inv(y_fake),
    turning the generator-loss gradient on D into the discriminator-loss
    gradient.
"""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from . import __version__
from . import autograd as ag
from . import tensor
from .errors import ConfigError, DivergenceError, FusedPropError, UnsupportedLambdaError
from .losses import eval_losses, get_loss, lambda_inv_of, lambda_of
from .nn import MlpSpec, build_discriminator, build_generator
from .optim import Optimizer
from .tensor import Rng, resolve_dtype
from .toy import mode_coverage, sample_ring_gaussians

MODES = ("conventional", "simgd2pass", "fusedprop", "invfusedprop")
FUSED_MODES = ("fusedprop", "invfusedprop")
CSV_HEADER = [
    "iter", "loss_d_real", "loss_d_fake", "loss_g",
    "y_real_mean", "y_fake_mean", "modes_covered", "hq_fraction", "wall_ms",
]


@dataclass
class TrainConfig:
    mode: str = "fusedprop"
    loss: str = "ns"
    arch_g: str = "2-64-64-2"
    arch_d: str = "2-64-64-1"
    act_g: str = "relu"
    act_d: str = "leaky_relu"
    optimizer: str = "adam"
    beta1: float = 0.0
    beta2: float = 0.9
    eps: float = 1e-8
    lr_d: float = 2e-4
    lr_g: float = 2e-4
    batch: int = 64
    iters: int = 1000
    seed: int = 0
    dtype: str = "f64"
    reuse_z: bool = False
    n_d: int = 1
    spectral: bool = False
    power_iters: int = 1
    match_power_iters: bool = False
    data_modes: int = 8
    data_radius: float = 2.0
    data_sigma: float = 0.02
    log_interval: int = 100
    eval_samples: int = 2000
    adaptive_switch: bool = False

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")
        spec = get_loss(self.loss)
        if self.adaptive_switch:
            raise ConfigError("adaptive switching between fused forms", code="NOT_IMPLEMENTED")
        if self.mode == "fusedprop" and not spec.has_lambda:
            raise UnsupportedLambdaError(spec.name)
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not (self.lr_d > 0 and self.lr_g > 0):
            raise ConfigError("learning rates must be positive")
        if self.batch < 1 or self.iters < 0:
            raise ConfigError("batch must be >= 1 and iters >= 0")
        if self.n_d < 1:
            raise ConfigError("n_d must be >= 1")
        if self.n_d > 1 and self.mode != "conventional":
            raise ConfigError(
                f"mode {self.mode} updates D and G together; multiple D steps per G step "
                "need --mode conventional"
            )
        if self.log_interval < 1 or self.power_iters < 1:
            raise ConfigError("log_interval and power_iters must be >= 1")
        resolve_dtype(self.dtype)
        g = MlpSpec.parse(self.arch_g, activation=self.act_g)
        d = MlpSpec.parse(self.arch_d, activation=self.act_d)
        if g.widths[-1] != d.widths[0]:
            raise ConfigError(f"generator output {g.widths[-1]} != discriminator input {d.widths[0]}")
        if d.widths[-1] != 1:
            raise ConfigError("discriminator must end in width 1")
        if d.widths[0] != 2:
            raise ConfigError("the ring dataset is two-dimensional; discriminator input must be 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @property
    def latent_dim(self) -> int:
        return int(self.arch_g.split("-")[0])

    @property
    def d_power_iters(self) -> int:
        """Power iterations per D forward; fused modes run one D forward per step."""
        if self.mode in FUSED_MODES and self.match_power_iters:
            return 2 * self.power_iters
        return self.power_iters


@dataclass
class TrainState:
    config: TrainConfig
    G: object
    D: object
    opt_g: Optimizer
    opt_d: Optimizer
    rng_data: Rng
    rng_z: Rng
    rng_eval: Rng
    i: int = 0

    @classmethod
    def create(cls, config: TrainConfig) -> "TrainState":
        config.validate()
        data, z, init, ev = Rng(config.seed).spawn(4)
        g_spec = MlpSpec.parse(config.arch_g, activation=config.act_g)
        d_spec = MlpSpec.parse(
            config.arch_d, activation=config.act_d,
            spectral=config.spectral, n_power_iterations=config.power_iters,
        )
        G = build_generator(g_spec, init, config.dtype)
        D = build_discriminator(d_spec, init, config.dtype, invfusedprop=config.mode == "invfusedprop")
        kw = dict(beta1=config.beta1, beta2=config.beta2, eps=config.eps)
        return cls(
            config, G, D,
            Optimizer(config.optimizer, config.lr_g, **kw),
            Optimizer(config.optimizer, config.lr_d, **kw),
            data, z, ev,
        )

    def draw_x(self) -> np.ndarray:
        c = self.config
        return sample_ring_gaussians(
            self.rng_data, c.batch, c.data_modes, c.data_radius, c.data_sigma, c.dtype
        )

    def draw_z(self, n: int | None = None) -> np.ndarray:
        c = self.config
        return self.rng_z.normal((n or c.batch, c.latent_dim), c.dtype)


@dataclass
class PassResult:
    d_grads: list | None
    g_grads: list | None
    y_real: np.ndarray | None = None
    y_fake: np.ndarray | None = None


def _flat(y: ag.Var) -> ag.Var:
    return ag.reshape(y, (y.shape[0],))


def _grads(store, bound):
    return [store.get(v.id, np.zeros_like(v.value)) for v in bound]


def d_pass(state: TrainState, x, z, power_iterations=None) -> PassResult:
    """Discriminator gradient of mean(L_D^R(D(x))) + mean(L_D(D(G(z)))), G frozen."""
    loss = get_loss(state.config.loss)
    tape = ag.Tape()
    gz = state.G.forward(tape.constant(z), state.G.bind(tape, False))
    dl = state.D.bind(tape)
    b = x.shape[0]
    y = _flat(state.D.forward(ag.concat([tape.constant(x), gz]), dl, power_iterations=power_iterations))
    yr, yf = y[:b], y[b:]
    root = ag.mean(loss.l_d_real(yr, ag)) + ag.mean(loss.l_d_fake(yf, ag))
    store = ag.backward(tape, root)
    return PassResult(_grads(store, dl), None, yr.value, yf.value)


def g_pass(state: TrainState, z, power_iterations=None) -> PassResult:
    """Generator gradient of mean(L_G(D(G(z)))) through the current, frozen D."""
    loss = get_loss(state.config.loss)
    tape = ag.Tape()
    gl = state.G.bind(tape)
    gz = state.G.forward(tape.constant(z), gl)
    y = _flat(state.D.forward(gz, state.D.bind(tape, False), power_iterations=power_iterations))
    store = ag.backward(tape, ag.mean(loss.l_g(y, ag)))
    return PassResult(None, _grads(store, gl), None, y.value)


def fused_pass(state: TrainState, x, z, power_iterations=None) -> PassResult:
    """Both gradients from one forward/backward with a scaling boundary after G."""
    loss = get_loss(state.config.loss)
    tape = ag.Tape()
    gl, dl = state.G.bind(tape), state.D.bind(tape)
    scale = ag.GradScale()
    gz = ag.fusedprop_boundary(state.G.forward(tape.constant(z), gl), scale)
    b = x.shape[0]
    y = _flat(state.D.forward(ag.concat([tape.constant(x), gz]), dl, power_iterations=power_iterations))
    yr, yf = y[:b], y[b:]
    scale.set(lambda_of(loss, yf.value))
    root = ag.mean(loss.l_d_real(yr, ag) + loss.l_d_fake(yf, ag))
    store = ag.backward(tape, root)
    return PassResult(_grads(store, dl), _grads(store, gl), yr.value, yf.value)


def invfused_pass(state: TrainState, x, z, power_iterations=None) -> PassResult:
    """Both gradients from one pass of the generator loss with pre-scaling inside D."""
    loss = get_loss(state.config.loss)
    if not state.D.invfusedprop:
        raise ConfigError("invfused_pass needs a discriminator built with invfusedprop=True")
    tape = ag.Tape()
    gl, dl = state.G.bind(tape), state.D.bind(tape)
    scale = ag.GradScale()
    gz = state.G.forward(tape.constant(z), gl)
    b = x.shape[0]
    y = _flat(state.D.forward(
        ag.concat([tape.constant(x), gz]), dl, grad_scale=scale, power_iterations=power_iterations
    ))
    yr, yf = y[:b], y[b:]
    # real samples keep their own gradient; fake ones are rescaled to the D loss
    scale.set(np.concatenate([np.ones(b, dtype=yf.dtype), lambda_inv_of(loss, yf.value)]))
    root = ag.mean(loss.l_d_real(yr, ag)) + ag.mean(loss.l_g(yf, ag))
    store = ag.backward(tape, root)
    return PassResult(_grads(store, dl), _grads(store, gl), yr.value, yf.value)


@dataclass
class StepStats:
    loss_d_real: float
    loss_d_fake: float
    loss_g: float
    y_real_mean: float
    y_fake_mean: float


def _losses(loss, yr, yf, yf_g=None):
    ldr, ld, lg = eval_losses(loss, yr, yf if yf_g is None else yf_g)
    if yf_g is not None:
        ld = loss.l_d_fake(yf, tensor)
    return StepStats(
        float(np.mean(ldr)), float(np.mean(ld)), float(np.mean(lg)),
        float(np.mean(yr)), float(np.mean(yf)),
    )


def train_step(state: TrainState) -> StepStats:
    """Advance ``state`` by one iteration in its configured mode."""
    c = state.config
    loss = get_loss(c.loss)
    it = state.i
    pi = c.d_power_iters
    G, D = state.G, state.D

    if c.mode == "conventional":
        for _ in range(c.n_d):
            x, z = state.draw_x(), state.draw_z()
            r1 = d_pass(state, x, z, pi)
            D.set_params(state.opt_d.step(D.params, r1.d_grads, it))
        if not c.reuse_z:
            z = state.draw_z()
        r2 = g_pass(state, z, pi)
        G.set_params(state.opt_g.step(G.params, r2.g_grads, it))
        stats = _losses(loss, r1.y_real, r1.y_fake, r2.y_fake)
    else:
        x, z = state.draw_x(), state.draw_z()
        if c.mode == "simgd2pass":
            r1 = d_pass(state, x, z, pi)
            r2 = g_pass(state, z, pi)
            d_grads, g_grads = r1.d_grads, r2.g_grads
            stats = _losses(loss, r1.y_real, r1.y_fake)
        else:
            run = fused_pass if c.mode == "fusedprop" else invfused_pass
            r = run(state, x, z, pi)
            d_grads, g_grads = r.d_grads, r.g_grads
            stats = _losses(loss, r.y_real, r.y_fake)
        new_d = state.opt_d.step(D.params, d_grads, it)
        new_g = state.opt_g.step(G.params, g_grads, it)
        D.set_params(new_d)
        G.set_params(new_g)

    vals = asdict(stats)
    if not all(np.isfinite(v) for v in vals.values()):
        raise DivergenceError("non-finite loss", it, vals)
    state.i += 1
    return stats


def dirac_gan_step(psi: float, theta: float, mode: str, loss="wasserstein", lr: float = 0.1):
    """One SGD step of the Dirac GAN: D(x) = psi * x, G = theta, real data at 0.

    Runs each schedule through the same tape machinery as the MLP trainer.
    """
    spec = get_loss(loss)
    zero = np.zeros((1, 1))

    def dgrad(p, t):
        tape = ag.Tape()
        w, tc, b = tape.leaf([[p]]), tape.constant([[t]]), tape.constant([0.0])
        yr = _flat(ag.linear(tape.constant(zero), w, b))
        yf = _flat(ag.linear(tc, w, b))
        root = ag.mean(spec.l_d_real(yr, ag)) + ag.mean(spec.l_d_fake(yf, ag))
        return float(ag.backward(tape, root)[w.id][0, 0])

    def ggrad(p, t):
        tape = ag.Tape()
        w, tl, b = tape.constant([[p]]), tape.leaf([[t]]), tape.constant([0.0])
        yf = _flat(ag.linear(tl, w, b))
        return float(ag.backward(tape, ag.mean(spec.l_g(yf, ag)))[tl.id][0, 0])

    if mode == "conventional":
        psi1 = psi - lr * dgrad(psi, theta)
        return psi1, theta - lr * ggrad(psi1, theta)
    if mode == "simgd2pass":
        return psi - lr * dgrad(psi, theta), theta - lr * ggrad(psi, theta)

    tape = ag.Tape()
    w, tl, b = tape.leaf([[psi]]), tape.leaf([[theta]]), tape.constant([0.0])
    scale = ag.GradScale()
    if mode == "fusedprop":
        fake = ag.fusedprop_boundary(tl, scale)
        y = _flat(ag.linear(ag.concat([tape.constant(zero), fake]), w, b))
        scale.set(lambda_of(spec, y.value[1:]))
        root = ag.mean(spec.l_d_real(y[:1], ag) + spec.l_d_fake(y[1:], ag))
    elif mode == "invfusedprop":
        y = _flat(ag.linear(ag.concat([tape.constant(zero), tl]), w, b, grad_scale=scale))
        scale.set(np.concatenate([[1.0], lambda_inv_of(spec, y.value[1:])]))
        root = ag.mean(spec.l_d_real(y[:1], ag)) + ag.mean(spec.l_g(y[1:], ag))
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    store = ag.backward(tape, root)
    return psi - lr * float(store[w.id][0, 0]), theta - lr * float(store[tl.id][0, 0])


@dataclass
class TrainResult:
    config: TrainConfig
    rows: list[dict]
    state: TrainState
    failure: dict | None = None

    @property
    def final(self) -> dict | None:
        return self.rows[-1] if self.rows else None


def evaluate(state: TrainState, z_eval: np.ndarray) -> tuple[int, float, np.ndarray]:
    c = state.config
    samples = state.G(z_eval)
    covered, hq = mode_coverage(samples, c.data_modes, c.data_radius, c.data_sigma)
    return covered, hq, samples


def config_banner(config: TrainConfig) -> str:
    return f"# fusedprop {__version__} config={json.dumps(config.to_dict(), sort_keys=True)}"


def run_training(config: TrainConfig, csv_path=None,
                 on_row: Callable[[dict], None] | None = None) -> TrainResult:
    """Train for ``config.iters`` iterations, logging one row per interval.

    A divergence stops the run; rows logged so far are kept and the failure
    is returned in ``TrainResult.failure`` rather than raised.
    """
    state = TrainState.create(config)
    z_eval = state.rng_eval.normal((config.eval_samples, config.latent_dim), config.dtype)
    rows: list[dict] = []
    acc = np.zeros(5)
    n_acc = 0
    failure = None
    fh = writer = None
    if csv_path is not None:
        fh = open(csv_path, "w", newline="")
        fh.write(config_banner(config) + "\n")
        writer = csv.DictWriter(fh, fieldnames=CSV_HEADER)
        writer.writeheader()
    t0 = time.perf_counter()
    try:
        while state.i < config.iters:
            try:
                # overflow is caught by the finiteness checks; keep the log quiet
                with np.errstate(over="ignore", invalid="ignore"):
                    s = train_step(state)
            except FusedPropError as e:
                failure = {
                    "iteration": state.i,
                    "error": type(e).__name__,
                    "message": str(e),
                    "losses": getattr(e, "losses", {}),
                }
                break
            acc += [s.loss_d_real, s.loss_d_fake, s.loss_g, s.y_real_mean, s.y_fake_mean]
            n_acc += 1
            if state.i % config.log_interval == 0 or state.i == config.iters:
                covered, hq, _ = evaluate(state, z_eval)
                m = acc / n_acc
                row = dict(zip(CSV_HEADER, [state.i, *map(float, m), covered, hq]))
                row["wall_ms"] = round((time.perf_counter() - t0) * 1e3, 3)
                rows.append(row)
                if writer:
                    writer.writerow(row)
                    fh.flush()
                if on_row:
                    on_row(row)
                acc[:] = 0
                n_acc = 0
    finally:
        if fh:
            fh.close()
    return TrainResult(config, rows, state, failure)


def rows_to_csv(rows, config: TrainConfig | None = None, drop_wall=False) -> str:
    buf = io.StringIO()
    if config is not None:
        buf.write(config_banner(config) + "\n")
    header = [h for h in CSV_HEADER if not (drop_wall and h == "wall_ms")]
    w = csv.DictWriter(buf, fieldnames=header, extrasaction="ignore")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
