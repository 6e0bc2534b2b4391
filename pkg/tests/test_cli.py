import json

from fusedprop.cli import main
from fusedprop.tensor import load_tensors


def test_losses_table(tmp_path, capsys):
    assert main(["losses", "--y", "0.5", "--verify", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "PASS scaling identity hinge" in out
    assert json.loads((tmp_path / "config.json").read_text())["command"] == "losses"


def test_gradcheck_exit_codes(tmp_path, capsys):
    dump = tmp_path / "g.fpt"
    rc = main(["gradcheck", "--loss", "ns", "--fd-points", "1", "--out", str(tmp_path / "a"),
               "--dump-grads", str(dump)])
    assert rc == 0
    grads = load_tensors(dump)
    assert len(grads) == 12 and grads[0].shape == (64, 2)
    rc = main(["gradcheck", "--loss", "hinge", "--out", str(tmp_path / "b")])
    assert rc == 2
    assert "UNSUPPORTED_LAMBDA" in capsys.readouterr().err
    assert main(["gradcheck", "--adaptive-switch", "--out", str(tmp_path / "c")]) == 2


def test_train_writes_artifacts_and_reruns(tmp_path):
    a = tmp_path / "a"
    args = ["train", "--iters", "30", "--log-interval", "10", "--arch-g", "2-8-2",
            "--arch-d", "2-8-1", "--out", str(a)]
    assert main(args) == 0
    assert {p.name for p in a.iterdir()} == {"config.json", "metrics.csv", "samples.svg"}
    assert "fusedprop 0.1.0 config=" in (a / "samples.svg").read_text()
    b = tmp_path / "b"
    assert main(["train", "--config", str(a / "config.json"), "--out", str(b)]) == 0

    def strip(p):
        return [",".join(line.split(",")[:-1]) for line in p.read_text().splitlines()[1:]]

    assert strip(a / "metrics.csv") == strip(b / "metrics.csv")
    resolved = json.loads((b / "config.json").read_text())["config"]
    assert resolved["arch_g"] == "2-8-2"


def test_train_divergence_exit_code(tmp_path):
    rc = main(["train", "--optimizer", "sgd", "--lr-d", "1e6", "--lr-g", "1e6", "--loss", "wasserstein",
               "--mode", "conventional", "--iters", "200", "--out", str(tmp_path), "--no-svg"])
    assert rc == 3
    fail = json.loads((tmp_path / "failure.json").read_text())
    assert fail["iteration"] < 200


def test_sweep_seeds(tmp_path, capsys):
    rc = main(["train", "--iters", "5", "--log-interval", "5", "--arch-g", "2-8-2", "--arch-d", "2-8-1",
               "--sweep-seeds", "2", "--out", str(tmp_path), "--no-svg"])
    assert rc == 0
    assert (tmp_path / "seed-0" / "metrics.csv").exists() and (tmp_path / "seed-1" / "metrics.csv").exists()
    assert "median modes_covered" in capsys.readouterr().out


def test_bench_cli(tmp_path, capsys):
    rc = main(["bench", "--modes", "conventional,invfusedprop", "--arch-g", "2-8-2", "--arch-d", "2-8-1",
               "--warmup", "10", "--repeats", "5", "--block-iters", "2", "--out", str(tmp_path)])
    assert rc == 0
    assert "model prediction: 1.500x" in capsys.readouterr().out
    assert (tmp_path / "bench.csv").exists() and (tmp_path / "bench.txt").exists()
    assert main(["bench", "--modes", "conventional,fusedprop", "--loss", "hinge", "--out", str(tmp_path)]) == 2
    assert main(["bench", "--modes", "fusedprop", "--loss", "hinge", "--out", str(tmp_path)]) == 2


def test_n_d_only_for_conventional(tmp_path):
    common = ["train", "--iters", "2", "--arch-g", "2-8-2", "--arch-d", "2-8-1", "--no-svg"]
    assert main(common + ["--mode", "conventional", "--n-d", "2", "--out", str(tmp_path / "a")]) == 0
    assert main(common + ["--mode", "fusedprop", "--n-d", "2", "--out", str(tmp_path / "b")]) == 2


def test_ttur_pair_echoed(tmp_path, capsys):
    main(["train", "--iters", "1", "--lr-d", "4e-4", "--lr-g", "1e-4", "--arch-g", "2-8-2",
          "--arch-d", "2-8-1", "--no-svg", "--out", str(tmp_path)])
    cfg = json.loads((tmp_path / "config.json").read_text())["config"]
    assert (cfg["lr_d"], cfg["lr_g"]) == (4e-4, 1e-4)
