import numpy as np
import pytest

from fusedprop.errors import ConfigError, UnsupportedLambdaError
from fusedprop.train import TrainConfig, TrainState, dirac_gan_step, rows_to_csv, run_training, train_step
from fusedprop.verify import exactness, hinge_dead_zone_state, max_rel_err

SMALL = dict(arch_g="2-16-16-2", arch_d="2-16-16-1", batch=8)


def test_validation_errors():
    with pytest.raises(UnsupportedLambdaError):
        TrainConfig(mode="fusedprop", loss="hinge").validate()
    with pytest.raises(ConfigError, match="NOT_IMPLEMENTED"):
        TrainConfig(adaptive_switch=True).validate()
    with pytest.raises(ConfigError, match="conventional"):
        TrainConfig(mode="fusedprop", n_d=2).validate()
    with pytest.raises(ConfigError):
        TrainConfig(arch_g="2-8-3").validate()
    with pytest.raises(ConfigError):
        TrainConfig(mode="altgd").validate()
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"bogus": 1})
    TrainConfig(mode="invfusedprop", loss="hinge").validate()


def test_config_round_trip():
    c = TrainConfig(mode="simgd2pass", loss="ls", seed=9)
    assert TrainConfig.from_dict(c.to_dict()) == c


@pytest.mark.parametrize("mode,want", [
    ("conventional", (0.9, 1.09)),
    ("simgd2pass", (0.9, 1.1)),
    ("fusedprop", (0.9, 1.1)),
    ("invfusedprop", (0.9, 1.1)),
])
def test_dirac_gan(mode, want):
    psi, theta = dirac_gan_step(1.0, 1.0, mode)
    assert abs(psi - want[0]) <= 1e-15 and abs(theta - want[1]) <= 1e-15


@pytest.mark.parametrize("loss", ["minimax", "ns", "wasserstein", "ls"])
def test_fused_exactness_small(loss):
    ex = exactness(TrainConfig(mode="fusedprop", loss=loss, seed=1, **SMALL))
    assert ex["g"] <= 1e-10 and ex["d"] <= 1e-10


@pytest.mark.parametrize("loss", ["minimax", "ns", "wasserstein", "ls", "hinge"])
def test_inverted_exactness_small(loss):
    ex = exactness(TrainConfig(mode="invfusedprop", loss=loss, seed=1, **SMALL))
    assert ex["g"] <= 1e-10 and ex["d"] <= 1e-10


def test_hinge_dead_zone_is_exact():
    cfg = TrainConfig(mode="invfusedprop", loss="hinge", seed=2, **SMALL)
    z = TrainState.create(cfg).draw_z()
    state = hinge_dead_zone_state(cfg, z)
    ex = exactness(cfg, z=z, state=state)
    frac = np.mean(ex["y_fake"] < -1)
    assert 0.25 <= frac <= 0.75
    assert ex["d"] <= 1e-10


def test_simgd_and_fused_trajectories_agree():
    def run(mode):
        s = TrainState.create(TrainConfig(mode=mode, seed=3, **SMALL))
        for _ in range(20):
            train_step(s)
        return s.D.params + s.G.params

    assert max_rel_err(run("fusedprop"), run("simgd2pass"), floor=1e-12) <= 1e-8
    assert max_rel_err(run("invfusedprop"), run("simgd2pass"), floor=1e-12) <= 1e-8


def test_conventional_differs_from_simultaneous():
    def run(mode):
        s = TrainState.create(TrainConfig(mode=mode, seed=3, reuse_z=True, **SMALL))
        for _ in range(3):
            train_step(s)
        return s.G.params

    assert max_rel_err(run("conventional"), run("simgd2pass")) > 1e-6


def test_spectral_and_multi_d_steps_run():
    s = TrainState.create(TrainConfig(mode="conventional", n_d=2, spectral=True, **SMALL))
    train_step(s)
    assert s.i == 1 and s.opt_d.t == 2 and s.opt_g.t == 1
    s = TrainState.create(TrainConfig(mode="invfusedprop", spectral=True, match_power_iters=True, **SMALL))
    assert s.config.d_power_iters == 2
    train_step(s)


def test_determinism_and_logging(tmp_path):
    cfg = TrainConfig(iters=40, log_interval=15, seed=5, **SMALL)
    a = run_training(cfg, csv_path=tmp_path / "a.csv")
    b = run_training(cfg)
    assert [r["iter"] for r in a.rows] == [15, 30, 40]
    assert rows_to_csv(a.rows, cfg, drop_wall=True) == rows_to_csv(b.rows, cfg, drop_wall=True)
    text = (tmp_path / "a.csv").read_text().splitlines()
    assert text[0].startswith("# fusedprop") and text[1].startswith("iter,loss_d_real")


def test_divergence_is_reported_not_raised():
    cfg = TrainConfig(optimizer="sgd", lr_d=1e6, lr_g=1e6, iters=200, log_interval=1,
                      mode="conventional", loss="wasserstein", **SMALL)
    res = run_training(cfg)
    assert res.failure is not None
    assert res.failure["iteration"] < 200
    assert res.failure["error"] == "DivergenceError"


def test_f32_training_stays_f32():
    s = TrainState.create(TrainConfig(dtype="f32", **SMALL))
    train_step(s)
    assert all(p.dtype == np.float32 for p in s.D.params + s.G.params)


@pytest.mark.parametrize("mode,loss", [(m, l) for m in ("fusedprop", "invfusedprop")
                                       for l in ("minimax", "ns", "wasserstein", "ls", "hinge")
                                       if not (m == "fusedprop" and l == "hinge")])
def test_fused_trajectories_track_simgd_for_every_loss(mode, loss):
    def run(m):
        s = TrainState.create(TrainConfig(mode=m, loss=loss, seed=4))
        for _ in range(100):
            train_step(s)
        return s.D.params + s.G.params

    assert max_rel_err(run(mode), run("simgd2pass")) <= 1e-8
