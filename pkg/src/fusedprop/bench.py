"""Wall-clock throughput of the training modes.

All modes of one report run in the same process, single-threaded, in
round-robin blocks so slow drifts of the host hit every mode alike. A mode's
rate is the median block rate. Its ratio against conventional training is the
median over rounds of the per-round rate ratio, which cancels most of the
jitter shared by neighbouring blocks.

Timed blocks call :func:`~fusedprop.train.train_step` only, so data and latent
sampling are inside the timed region and metric logging is not.
"""

from __future__ import annotations

import csv
import gc
import io
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from . import autograd as ag
from .errors import ConfigError, DivergenceError, FusedPropError
from .train import TrainConfig, TrainState, config_banner, train_step

MATCH_KEYS = ("loss", "arch_g", "arch_d", "batch", "dtype", "seed")
CSV_HEADER = ["mode", "loss", "arch", "batch", "dtype", "iters_per_sec",
              "ratio_vs_conventional", "model_prediction"]


def model_prediction(t_d: float, t_g: float, serial: bool = False) -> float:
    """Predicted conventional/fused time ratio from per-network pass costs.

    Parallel parameter/activation gradients: (6 T_D + 3 T_G) / (4 T_D + 2 T_G).
    Serial: (8 T_D + 4 T_G) / (6 T_D + 3 T_G).
    """
    if serial:
        return (8 * t_d + 4 * t_g) / (6 * t_d + 3 * t_g)
    return (6 * t_d + 3 * t_g) / (4 * t_d + 2 * t_g)


@contextmanager
def quiet_timing():
    """Single BLAS thread and no cyclic GC while timing."""
    enabled = gc.isenabled()
    with threadpool_limits(1):
        gc.collect()
        gc.disable()
        try:
            yield
        finally:
            if enabled:
                gc.enable()


class _Runner:
    def __init__(self, config: TrainConfig):
        self.config = replace(config, iters=10**12)
        self.reseeded = False
        self.state = TrainState.create(self.config)

    def run(self, n: int) -> None:
        try:
            for _ in range(n):
                train_step(self.state)
        except DivergenceError:
            if self.reseeded:
                raise
            self.reseeded = True
            self.config = replace(self.config, seed=self.config.seed + 1)
            self.state = TrainState.create(self.config)
            for _ in range(n):
                train_step(self.state)

    def time_block(self, n: int) -> float:
        t0 = time.perf_counter()
        self.run(n)
        return n / (time.perf_counter() - t0)


def _check_counts(warmup, repeats):
    if warmup < 10 or repeats < 5:
        raise ConfigError("benchmarks need warmup >= 10 and repeats >= 5")


def time_mode(config: TrainConfig, warmup: int = 10, repeats: int = 5, block_iters: int = 50) -> float:
    """Median iterations/second over ``repeats`` blocks of ``block_iters`` iterations."""
    _check_counts(warmup, repeats)
    r = _Runner(config)
    with quiet_timing():
        r.run(warmup)
        rates = [r.time_block(block_iters) for _ in range(repeats)]
    return float(np.median(rates))


def measure_pass_times(config: TrainConfig, repeats: int = 50) -> tuple[float, float]:
    """Median seconds for one forward+backward of D and of G at batch ``B``."""
    state = TrainState.create(replace(config, mode="conventional"))
    x = state.draw_x()
    z = state.draw_z()

    def d_once():
        tape = ag.Tape()
        h = tape.leaf(x)
        ag.backward(tape, ag.sum(state.D.forward(h, state.D.bind(tape))))

    def g_once():
        tape = ag.Tape()
        out = state.G.forward(tape.constant(z), state.G.bind(tape))
        ag.backward(tape, ag.sum(out))

    out = []
    with quiet_timing():
        for fn in (d_once, g_once):
            for _ in range(5):
                fn()
            ts = []
            for _ in range(repeats):
                t0 = time.perf_counter()
                fn()
                ts.append(time.perf_counter() - t0)
            out.append(float(np.median(ts)))
    return out[0], out[1]


@dataclass
class ModeTiming:
    mode: str
    iters_per_sec: float
    block_rates: list[float]
    ratio_vs_conventional: float | None = None


@dataclass
class BenchReport:
    config: TrainConfig
    timings: list[ModeTiming]
    warmup: int
    repeats: int
    block_iters: int
    t_d: float
    t_g: float
    model_parallel: float = field(init=False)
    model_serial: float = field(init=False)

    def __post_init__(self):
        self.model_parallel = model_prediction(self.t_d, self.t_g)
        self.model_serial = model_prediction(self.t_d, self.t_g, serial=True)

    @property
    def arch(self) -> str:
        return f"G{self.config.arch_g}/D{self.config.arch_d}"

    def rate(self, mode: str) -> float:
        return next(t.iters_per_sec for t in self.timings if t.mode == mode)

    def ratio(self, mode: str) -> float | None:
        return next(t.ratio_vs_conventional for t in self.timings if t.mode == mode)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# fusedprop {__version__} warmup={self.warmup} repeats={self.repeats} "
                  f"block_iters={self.block_iters} t_d={self.t_d:.6g} t_g={self.t_g:.6g} "
                  f"model_serial={self.model_serial:.4f}\n")
        buf.write(config_banner(self.config) + "\n")
        w = csv.writer(buf)
        w.writerow(CSV_HEADER)
        c = self.config
        for t in self.timings:
            ratio = "" if t.ratio_vs_conventional is None else f"{t.ratio_vs_conventional:.4f}"
            w.writerow([t.mode, c.loss, self.arch, c.batch, c.dtype, f"{t.iters_per_sec:.3f}",
                        ratio, f"{self.model_parallel:.4f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        c = self.config
        lines = [
            f"loss={c.loss} arch={self.arch} batch={c.batch} dtype={c.dtype} seed={c.seed} "
            f"warmup={self.warmup} repeats={self.repeats}x{self.block_iters} iters",
            f"pass times: T_D={self.t_d * 1e3:.3f} ms  T_G={self.t_g * 1e3:.3f} ms",
            f"{'mode':<14}{'iters/s':>10}{'vs conv':>10}",
        ]
        for t in self.timings:
            ratio = "-" if t.ratio_vs_conventional is None else f"{t.ratio_vs_conventional:.3f}x"
            lines.append(f"{t.mode:<14}{t.iters_per_sec:>10.1f}{ratio:>10}")
        lines.append(
            f"model prediction: {self.model_parallel:.3f}x (parallel grads), "
            f"{self.model_serial:.3f}x (serial grads)"
        )
        return "\n".join(lines)


def speedup_report(configs: list[TrainConfig], warmup: int = 10, repeats: int = 5,
                   block_iters: int = 50) -> BenchReport:
    """Time every config in interleaved blocks and compare with the cost model."""
    _check_counts(warmup, repeats)
    if len(configs) < 2:
        raise ConfigError("a speedup report needs at least two modes")
    base = configs[0]
    for c in configs[1:]:
        diff = [k for k in MATCH_KEYS if getattr(c, k) != getattr(base, k)]
        if diff:
            raise FusedPropError(f"unmatched benchmark settings: {', '.join(diff)} differ")
    modes = [c.mode for c in configs]
    if len(set(modes)) != len(modes):
        raise ConfigError("each mode may appear once per report")
    for c in configs:
        c.validate()

    runners = [_Runner(c) for c in configs]
    rates = [[] for _ in runners]
    with quiet_timing():
        for r in runners:
            r.run(warmup)
        for rnd in range(repeats):
            # rotate the starting mode so no mode always follows the same neighbour
            order = [(rnd + k) % len(runners) for k in range(len(runners))]
            for k in order:
                rates[k].append(runners[k].time_block(block_iters))
    t_d, t_g = measure_pass_times(base)

    timings = [ModeTiming(c.mode, float(np.median(r)), r) for c, r in zip(configs, rates)]
    if "conventional" in modes:
        ref = np.asarray(rates[modes.index("conventional")])
        for t in timings:
            t.ratio_vs_conventional = float(np.median(np.asarray(t.block_rates) / ref))
    return BenchReport(base, timings, warmup, repeats, block_iters, t_d, t_g)


def default_bench_config(**kw) -> TrainConfig:
    """Matched-width MLPs (T_D close to T_G) at batch 64 in f32."""
    base = dict(arch_g="2-256-256-2", arch_d="2-256-256-1", batch=64, dtype="f32", loss="ns")
    base.update(kw)
    return TrainConfig(**base)
