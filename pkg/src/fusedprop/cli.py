"""``fusedprop`` command line: gradcheck, train, bench, losses.

Every run prints its fully resolved configuration as JSON and writes the same
document to ``<out>/config.json``. ``train --config <out>/config.json``
reproduces a run. Exit codes: 0 success, 1 failed check, 2 configuration
error, 3 numeric divergence.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, FusedPropError, NumericError, SingularScaleError
from .losses import CLI_NAMES, LOSSES, get_loss
from .tensor import RNG_ALGORITHM, dump_tensors
from .train import MODES, TrainConfig, config_banner, run_training

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _echo(out_dir: Path, command: str, resolved: dict) -> None:
    doc = {"fusedprop": __version__, "rng": RNG_ALGORITHM, "command": command, **resolved}
    text = json.dumps(doc, indent=2, sort_keys=True)
    print(text)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(text + "\n")


def _csv_list(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


def _add_model_flags(p, arch_g=None, arch_d=None, batch=None, dtype=None):
    p.add_argument("--loss", default=None, choices=CLI_NAMES + tuple(LOSSES),
                   help="GAN loss (default ns)")
    p.add_argument("--arch-g", default=arch_g, help="generator widths, e.g. 2-64-64-2")
    p.add_argument("--arch-d", default=arch_d, help="discriminator widths, e.g. 2-64-64-1")
    p.add_argument("--batch", type=int, default=batch)
    p.add_argument("--dtype", default=dtype, choices=("f32", "f64"))
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--adaptive-switch", action="store_true", default=None,
                   help="switch between fused forms at run time (not implemented)")


def _add_train_flags(p):
    p.add_argument("--mode", default=None, choices=MODES)
    p.add_argument("--optimizer", default=None, choices=("sgd", "adam"))
    p.add_argument("--beta1", type=float, default=None)
    p.add_argument("--beta2", type=float, default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--lr-d", type=float, default=None)
    p.add_argument("--lr-g", type=float, default=None)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--n-d", type=int, default=None, help="D steps per G step (conventional only)")
    p.add_argument("--reuse-z", action="store_true", default=None,
                   help="conventional: reuse the D-step latent batch for the G step")
    p.add_argument("--spectral", action="store_true", default=None,
                   help="spectral normalization on every discriminator layer")
    p.add_argument("--power-iters", type=int, default=None)
    p.add_argument("--match-power-iters", action="store_true", default=None,
                   help="fused modes: double power iterations to match conventional")
    p.add_argument("--log-interval", type=int, default=None)
    p.add_argument("--eval-samples", type=int, default=None)


_FLAG_FIELDS = {f.name for f in fields(TrainConfig)}


def _resolve(args, base: dict | None = None, **defaults) -> TrainConfig:
    d = TrainConfig().to_dict()
    d.update(defaults)
    d.update(base or {})
    for k, v in vars(args).items():
        if k in _FLAG_FIELDS and v is not None:
            d[k] = v
    return TrainConfig.from_dict(d).validate()


def _out_dir(args, name: str) -> Path:
    return Path(args.out) if args.out else Path("runs") / name


# gradcheck

def cmd_gradcheck(args) -> int:
    from .losses import verify_scaling_identity
    from .tensor import Rng
    from .verify import exactness, fd_suite

    cfg = _resolve(args, mode=args.mode or "fusedprop", batch=16, dtype="f64")
    tol = 1e-10 if cfg.dtype == "f64" else 1e-4
    out = _out_dir(args, f"gradcheck-{cfg.mode}-{cfg.loss}-s{cfg.seed}")
    _echo(out, "gradcheck", {"config": cfg.to_dict(), "tolerances": {
        "finite_difference": 1e-6, "fused_vs_two_pass": tol, "scaling_identity": 1e-9},
        "fd_points": args.fd_points})

    results = []
    fd = fd_suite(points=args.fd_points, seed=cfg.seed)
    name, worst = max(fd.items(), key=lambda kv: kv[1])
    results.append(("finite_difference", worst, 1e-6, f"worst {name}"))

    ex = exactness(cfg)
    results.append(("fused_vs_two_pass.G", ex["g"], tol, cfg.mode))
    results.append(("fused_vs_two_pass.D", ex["d"], tol, cfg.mode))

    rep = verify_scaling_identity(get_loss(cfg.loss), 10_000, Rng(cfg.seed))
    results.append(("scaling_identity", rep.worst, 1e-9, rep.loss))

    if args.dump_grads:
        f = ex["fused"]
        dump_tensors(args.dump_grads, list(f.d_grads) + list(f.g_grads))

    failed = []
    for check, err, bound, note in results:
        ok = err <= bound
        print(f"{'PASS' if ok else 'FAIL'} {check:<24} max rel err {err:.3e} (<= {bound:g}) {note}")
        if not ok:
            failed.append(check)
    if failed:
        print(f"failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# train

def _train_one(cfg: TrainConfig, out: Path, svg: bool) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    res = run_training(cfg, csv_path=out / "metrics.csv")
    summary = {"seed": cfg.seed, "final": res.final, "failure": res.failure}
    if res.failure:
        (out / "failure.json").write_text(json.dumps(res.failure, indent=2) + "\n")
    if svg and res.rows:
        from .toy import scatter_svg

        samples = res.state.G(res.state.rng_eval.normal((1000, cfg.latent_dim), cfg.dtype))
        title = f"{cfg.mode} {cfg.loss} seed {cfg.seed} iter {res.state.i}"
        svg = scatter_svg(samples, cfg.data_modes, cfg.data_radius, title=title, comment=config_banner(cfg))
        (out / "samples.svg").write_text(svg)
    return summary


def _train_job(job):
    cfg_dict, out, svg = job
    return _train_one(TrainConfig.from_dict(cfg_dict), Path(out), svg)


def cmd_train(args) -> int:
    base = None
    if args.config:
        doc = json.loads(Path(args.config).read_text())
        base = doc.get("config", doc)
    cfg = _resolve(args, base)
    out = _out_dir(args, f"train-{cfg.mode}-{cfg.loss}-s{cfg.seed}")
    _echo(out, "train", {"config": cfg.to_dict(), "sweep_seeds": args.sweep_seeds})

    if args.sweep_seeds <= 1:
        s = _train_one(cfg, out, not args.no_svg)
        summaries = [s]
    else:
        jobs = [(replace(cfg, seed=cfg.seed + k).to_dict(), str(out / f"seed-{cfg.seed + k}"), not args.no_svg)
                for k in range(args.sweep_seeds)]
        if args.jobs > 1:
            with ProcessPoolExecutor(args.jobs) as ex:
                summaries = list(ex.map(_train_job, jobs))
        else:
            summaries = [_train_job(j) for j in jobs]

    for s in summaries:
        f = s["final"]
        if f:
            print(f"seed {s['seed']}: iter {f['iter']} modes_covered {f['modes_covered']} "
                  f"hq_fraction {f['hq_fraction']:.3f}")
        if s["failure"]:
            print(f"seed {s['seed']}: diverged at iteration {s['failure']['iteration']}: "
                  f"{s['failure']['message']}", file=sys.stderr)
    finals = [s["final"] for s in summaries if s["final"]]
    if len(finals) > 1:
        print(f"median modes_covered {np.median([f['modes_covered'] for f in finals]):g} "
              f"median hq_fraction {np.median([f['hq_fraction'] for f in finals]):.3f}")
    return EXIT_DIVERGED if any(s["failure"] for s in summaries) else EXIT_OK


# bench

def cmd_bench(args) -> int:
    from .bench import default_bench_config, speedup_report, time_mode

    modes = _csv_list(args.modes)
    if not modes:
        raise ConfigError("--modes needs at least one mode")
    bench_defaults = default_bench_config().to_dict()
    configs = [
        _resolve(args, {k: bench_defaults[k] for k in ("arch_g", "arch_d", "batch", "dtype")}, mode=m)
        for m in modes
    ]
    base = configs[0]
    out = _out_dir(args, f"bench-{base.loss}-b{base.batch}")
    _echo(out, "bench", {"config": base.to_dict(), "modes": modes, "warmup": args.warmup,
                          "repeats": args.repeats, "block_iters": args.block_iters})
    if len(configs) == 1:
        rate = time_mode(base, args.warmup, args.repeats, args.block_iters)
        print(f"{base.mode}: {rate:.1f} iters/s")
        (out / "bench.csv").write_text(
            config_banner(base) + "\n"
            "mode,loss,arch,batch,dtype,iters_per_sec,ratio_vs_conventional,model_prediction\n"
            f"{base.mode},{base.loss},G{base.arch_g}/D{base.arch_d},{base.batch},{base.dtype},{rate:.3f},,\n"
        )
        return EXIT_OK
    report = speedup_report(configs, args.warmup, args.repeats, args.block_iters)
    table = report.to_table()
    print(table)
    (out / "bench.txt").write_text(table + "\n")
    (out / "bench.csv").write_text(report.to_csv())
    return EXIT_OK


# losses

def _fmt(v):
    return f"{v + 0.0:.6g}"  # no "-0"


def cmd_losses(args) -> int:
    from .losses import eval_losses, lambda_inv_of, lambda_of, verify_scaling_identity
    from .tensor import Rng

    ys = np.asarray(args.y, dtype=np.float64)
    out = _out_dir(args, "losses")
    _echo(out, "losses", {"y": ys.tolist(), "verify": args.verify, "seed": args.seed})
    print(f"{'loss':<14}{'y':>8}{'L_D^R':>12}{'L_D':>12}{'L_G':>12}{'lambda':>12}{'lambda_inv':>12}")
    for name in CLI_NAMES:
        spec = get_loss(name)
        for y in ys:
            ldr, ld, lg = (float(v[0]) for v in eval_losses(spec, [y], [y]))
            try:
                lam = _fmt(float(lambda_of(spec, [y])[0]))
            except SingularScaleError:
                lam = "pole"
            except ConfigError:
                lam = "none"
            try:
                lam_inv = _fmt(float(lambda_inv_of(spec, [y])[0]))
            except SingularScaleError:
                lam_inv = "pole"
            print(f"{name:<14}{y:>8g}{_fmt(ldr):>12}{_fmt(ld):>12}{_fmt(lg):>12}{lam:>12}{lam_inv:>12}")
    if args.verify:
        rng = Rng(args.seed)
        bad = False
        for name in CLI_NAMES:
            rep = verify_scaling_identity(get_loss(name), 10_000, rng)
            ok = rep.worst <= 1e-9
            bad |= not ok
            print(f"{'PASS' if ok else 'FAIL'} scaling identity {name:<12} max rel err {rep.worst:.3e}")
        return EXIT_CHECK if bad else EXIT_OK
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fusedprop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"fusedprop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference, fused-vs-two-pass and scaling checks")
    _add_model_flags(p)
    p.add_argument("--mode", default=None, choices=("fusedprop", "invfusedprop"))
    p.add_argument("--fd-points", type=int, default=5, help="random points for the finite-difference suite")
    p.add_argument("--dump-grads", metavar="PATH", help="write fused D then G gradients as FPT1 records")
    p.add_argument("--out", help="directory for the config sidecar")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("train", help="train on the ring-of-Gaussians toy data")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--config", help="resolved config.json from an earlier run")
    p.add_argument("--sweep-seeds", type=int, default=1, metavar="N", help="run N consecutive seeds")
    p.add_argument("--jobs", type=int, default=1, help="concurrent runs for --sweep-seeds")
    p.add_argument("--no-svg", action="store_true", help="skip the final sample scatter")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="iterations/second per mode and speedup ratios")
    _add_model_flags(p)
    _add_train_flags(p)
    p.add_argument("--modes", default="conventional,fusedprop", help="comma-separated modes")
    p.add_argument("--warmup", type=int, default=20)
    p.add_argument("--repeats", type=int, default=30)
    p.add_argument("--block-iters", type=int, default=20)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("losses", help="tabulate losses and scaling factors")
    p.add_argument("--y", type=float, nargs="+", default=[-2.0, -1.0, 0.0, 0.5, 2.0])
    p.add_argument("--verify", action="store_true", help="check the scaling identities on 10^4 samples")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="directory for the config sidecar")
    p.set_defaults(func=cmd_losses)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "mode", None) and args.command == "bench":
        raise SystemExit("bench takes --modes, not --mode")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    except FusedPropError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK


if __name__ == "__main__":
    sys.exit(main())
