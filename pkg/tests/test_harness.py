import os

import numpy as np
import pytest

from rischan.denoiser import build_net, load_checkpoint
from rischan.harness import experiments as ex
from rischan.harness import load_config
from rischan.harness.cli import run
from rischan.harness.config import ExperimentConfig, parse_text

TINY = {
    "n_samples": 20, "test_samples": 4, "rg_samples": 50, "epochs": 2, "sweep_samples": 4,
    "snr_db": "-5,15", "direct_epochs": 1, "batch_size": 8, "patches_per_sample": 1,
}


def tiny(tmp_path, name="run", **over):
    items = dict(TINY, out_dir=str(tmp_path / name))
    items.update(over)
    return load_config(env={}, overrides=items)


def cli_args(cfg_dir, *extra):
    out = ["--out-dir", str(cfg_dir)]
    for k, v in TINY.items():
        out += ["--set", f"{k}={v}"]
    return list(extra) + out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    cfg = tiny(tmp_path_factory.mktemp("h"))
    info = ex.generate(cfg)
    ex.train_model(cfg)
    return cfg, info


def test_generate_split_and_files(trained):
    cfg, info = trained
    assert (info["train"], info["val"]) == (14, 6) == cfg.split_sizes
    names = set(os.listdir(cfg.out_dir))
    assert {"train.rcds", "val.rcds", "test_common.npz", "test_snr_m5.npz", "test_snr_15.npz",
            "config.resolved.txt", "checkpoint.rcnn", "loss.csv"} <= names


def test_config_echo_reproduces_run(trained):
    cfg, _ = trained
    text = open(os.path.join(cfg.out_dir, "config.resolved.txt")).read()
    assert ExperimentConfig.from_items(parse_text(text)) == cfg


def test_generate_is_byte_deterministic(trained, tmp_path):
    cfg, _ = trained
    again = tiny(tmp_path, "again")
    ex.generate(again)
    for name in ("train.rcds", "val.rcds", "test_common.npz", "test_snr_m5.npz"):
        a = open(os.path.join(cfg.out_dir, name), "rb").read()
        b = open(os.path.join(again.out_dir, name), "rb").read()
        assert a == b, name


def test_eval_rows(trained):
    cfg, _ = trained
    rows = ex.evaluate(cfg)
    assert [r.method for r in rows[:6]] == ["LS", "LMMSE", "LMMSE-noM", "B-LMMSE", "net-full", "net-tiled"]
    assert {r.axis for r in rows} == {"snr_db=-5", "snr_db=15"}
    table = ex.read_csv(os.path.join(cfg.out_dir, "eval.csv"))
    assert list(table[0]) == list(ex.CSV_HEADER) and len(table) == 12
    for r in table:
        assert float(r["nmse_db"]) == pytest.approx(10 * np.log10(float(r["nmse_linear"])))


def test_resume_continues_loss_trace(trained, tmp_path):
    cfg, _ = trained
    longer = load_config(env={}, overrides=dict(TINY, out_dir=cfg.out_dir, epochs=3))
    ckpt = os.path.join(tmp_path, "two.rcnn")
    os.replace(os.path.join(cfg.out_dir, "checkpoint.rcnn"), ckpt)
    resumed = ex.train_model(longer, resume=ckpt)
    straight_dir = tmp_path / "straight"
    straight = tiny(tmp_path, "straight", epochs=3)
    ex.generate(straight)
    full = ex.train_model(straight)
    assert [h[1] for h in resumed["history"]] == [h[1] for h in full["history"][2:]]
    assert straight_dir.exists()
    os.replace(ckpt, os.path.join(cfg.out_dir, "checkpoint.rcnn"))


def test_epochs_zero_keeps_initialization(trained, tmp_path):
    cfg, _ = trained
    zero = load_config(env={}, overrides=dict(TINY, out_dir=str(tmp_path / "z")))
    for name in ("train.rcds", "val.rcds"):
        os.makedirs(zero.out_dir, exist_ok=True)
        with open(os.path.join(cfg.out_dir, name), "rb") as src:
            open(os.path.join(zero.out_dir, name), "wb").write(src.read())
    info = ex.train_model(zero, epochs=0)
    net, header, _ = load_checkpoint(info["checkpoint"])
    fresh = build_net(zero.net_config())
    assert header["epoch"] == "0"
    for (p, _), (q, _) in zip(net.parameters(), fresh.parameters()):
        assert np.array_equal(p, q)
    assert np.isfinite(info["val_nmse_db"])


def test_noiseless_eval_hits_floor(tmp_path):
    cfg = tiny(tmp_path, snr_db="inf", ideal_direct_cancellation="true", epochs=0)
    ex.generate(cfg)
    ex.train_model(cfg)
    rows = {r.method: r for r in ex.evaluate(cfg)}
    assert rows["LMMSE-noM"].cells()[3] == "-300.0"
    assert rows["LS"].cells()[3] == "-300.0"
    assert rows["LMMSE"].cells()[3] == "-300.0"
    # an untrained net is the identity map, exact up to float32 rounding of the input
    assert float(rows["net-full"].cells()[3]) < -140


def test_sweep_marks_ls_unavailable_below_n(trained):
    cfg, _ = trained
    short = load_config(env={}, overrides=dict(TINY, out_dir=cfg.out_dir, sweep_pilot_L="8,16"))
    rows = ex.sweep(short, "pilot_L")
    by = {(r.axis, r.method): r.cells() for r in rows}
    assert by[("pilot_L=8;snr_db=10", "LS")][2] == ex.UNAVAILABLE
    assert by[("pilot_L=8;snr_db=10", "net-full")][2] == ex.UNAVAILABLE
    assert by[("pilot_L=8;snr_db=10", "LMMSE")][2] != ex.UNAVAILABLE
    assert by[("pilot_L=16;snr_db=10", "LS")][2] != ex.UNAVAILABLE


@pytest.mark.parametrize("axis", ["antennas_M", "elements_N", "correlation", "snr"])
def test_other_sweep_axes_run(trained, axis):
    cfg, _ = trained
    rows = ex.sweep(cfg, axis)
    assert len(rows) % 6 == 0 and rows
    assert os.path.exists(os.path.join(cfg.out_dir, f"sweep_{axis}.csv"))


def test_direct_experiment(tmp_path):
    cfg = tiny(tmp_path)
    rows = ex.direct_experiment(cfg)
    assert [r.method for r in rows] == ["LS", "net-full"] * 2
    assert os.path.exists(os.path.join(cfg.out_dir, "direct.csv"))


def test_complexity_report(tmp_path):
    text = ex.complexity_report(tiny(tmp_path))
    assert "total" in text and os.path.exists(tmp_path / "run" / "complexity.csv")


def test_selftest_passes():
    assert all(ok for _, ok, _ in ex.selftest(0))


# ---------------------------------------------------------------- CLI


def test_cli_selftest_and_complexity(tmp_path, capsys):
    assert run(cli_args(tmp_path, "selftest")) == 0
    assert "PASS gradient-check" in capsys.readouterr().out
    assert run(cli_args(tmp_path, "complexity")) == 0


def test_cli_pipeline(tmp_path, capsys):
    assert run(cli_args(tmp_path, "generate", "--deterministic")) == 0
    assert run(cli_args(tmp_path, "train", "--epochs", "1")) == 0
    assert "validation NMSE" in capsys.readouterr().out
    assert run(cli_args(tmp_path, "eval")) == 0
    assert capsys.readouterr().out.startswith(",".join(ex.CSV_HEADER))


def test_cli_config_errors(tmp_path, capsys):
    assert run(cli_args(tmp_path, "generate", "--set", "pilot_L=4")) == 2
    assert run(cli_args(tmp_path, "generate", "--set", "nope")) == 2
    assert run(cli_args(tmp_path, "eval")) == 2
    assert "missing input" in capsys.readouterr().err
    cfg_file = tmp_path / "bad.txt"
    cfg_file.write_text("levels=two\n")
    assert run(cli_args(tmp_path, "generate", "--config", str(cfg_file))) == 2


def test_cli_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("RISCHAN_PILOT_L", "4")
    assert run(cli_args(tmp_path, "generate")) == 2


def test_cli_integrity_errors(tmp_path):
    assert run(cli_args(tmp_path, "generate")) == 0
    path = tmp_path / "train.rcds"
    raw = path.read_bytes()
    path.write_bytes(raw[:-10])
    assert run(cli_args(tmp_path, "train")) == 3
    path.write_bytes(raw)
    (tmp_path / "bad.rcnn").write_bytes(b"NOPE" + bytes(20))
    assert run(cli_args(tmp_path, "eval", "--checkpoint", str(tmp_path / "bad.rcnn"))) == 3
