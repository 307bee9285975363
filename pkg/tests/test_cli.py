import subprocess
import sys

import numpy as np
import pytest

from svehdr.cli import main
from svehdr.config import TrainConfig
from svehdr.imageio import read_pfm
from svehdr.network import ModelConfig


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_usage_errors_exit_1(capsys):
    assert run(capsys, "frobnicate")[0] == 1
    assert run(capsys, "count", "--res", "abc")[0] == 1
    code, _, err = run(capsys, "train", "--config", "missing.cfg")
    assert code == 1 and "not found" in err


def test_count_table(capsys):
    code, out, _ = run(capsys, "count")
    assert code == 0
    rows = {line.split("\t")[0]: line.split("\t") for line in out.splitlines()[1:]}
    assert rows["svc5"][1] == "1233667"
    assert rows["rb+egb"][1] == "1849907"


def test_count_for_config(capsys, tmp_path):
    cfg = TrainConfig(model=ModelConfig(rb_blocks=1, egb_blocks=0, channels=4, fusion="none"))
    (tmp_path / "c.cfg").write_text(cfg.dumps())
    code, out, _ = run(capsys, "count", "--config", str(tmp_path / "c.cfg"), "--res", "4x2")
    assert code == 0
    params, flops = out.splitlines()[1].split("\t")
    assert int(flops) == 8 * int(params)


def test_check_suite_passes(capsys):
    code, out, _ = run(capsys, "check", "--suite", "mask")
    assert code == 0 and out.startswith("PASS") and "FAIL" not in out


def test_end_to_end(capsys, tmp_path):
    data = tmp_path / "data"
    assert run(capsys, "gen-data", "--out", str(data), "--count", "5", "--size", "16x16", "--ratio", "8")[0] == 0
    model = ModelConfig(rb_blocks=2, egb_blocks=2, channels=4, egb_c=2, rb_head="svc3", egb_head="svc3")
    cfg = TrainConfig(data="data", out="run", model=model, batch=2, patch=8, iterations=4, ckpt_interval=0)
    (tmp_path / "t.cfg").write_text(cfg.dumps())

    code, out, _ = run(capsys, "train", "--config", str(tmp_path / "t.cfg"), "--log-every", "1")
    assert code == 0 and len([ln for ln in out.splitlines() if "lr=" in ln]) == 4
    ckpt = str(tmp_path / "run" / "last.ckpt")

    code, out, _ = run(capsys, "eval", "--data", str(data), "--ckpt", ckpt, "--out", str(tmp_path / "ev"))
    assert code == 0 and "psnr_rgb" in out
    assert (tmp_path / "ev" / "metrics.tsv").exists() and (tmp_path / "ev" / "metrics.png").exists()

    src = sorted((data / "test").glob("*.bayer.png"))[0]
    code, _, _ = run(capsys, "infer", "--input", str(src), "--crf", str(data / "crf.txt"), "--ckpt", ckpt,
                     "--out", str(tmp_path / "o.pfm"), "--png", str(tmp_path / "o.png"))
    assert code == 0 and read_pfm(tmp_path / "o.pfm").shape == (16, 16, 3)

    code, out, _ = run(capsys, "inspect", "--ckpt", ckpt, "--sample", str(src), "--out", str(tmp_path / "ins"))
    lines = out.splitlines()
    assert code == 0 and lines[0] == "block\tbeta"
    assert [ln.split("\t")[0] for ln in lines[1:3]] == ["1", "2"]
    assert all(abs(float(ln.split("\t")[1]) - 1.0) < 0.01 for ln in lines[1:3])
    assert (tmp_path / "ins" / "egb_pca.png").exists()

    code, _, err = run(capsys, "eval", "--data", str(data), "--ckpt", str(tmp_path / "nope.ckpt"))
    assert code == 1 and "not found" in err


def test_numeric_failure_exits_2(capsys, tmp_path, monkeypatch):
    from svehdr import pipeline
    from svehdr.errors import NumericError

    def boom(*a, **k):
        raise NumericError("loss became nan")

    monkeypatch.setattr(pipeline, "train", boom)
    cfg = TrainConfig()
    (tmp_path / "t.cfg").write_text(cfg.dumps())
    code, _, err = run(capsys, "train", "--config", str(tmp_path / "t.cfg"))
    assert code == 2 and "nan" in err


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "svehdr.cli", "count", "--res", "120x120"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    flops = {ln.split("\t")[0]: int(ln.split("\t")[4]) for ln in proc.stdout.splitlines()[1:]}
    assert np.isclose(flops["rb+egb"] * 16 / 1e11, 4.262, atol=5e-4)


@pytest.mark.parametrize("argv", [["gen-data", "--out", "x", "--count", "0"], ["check", "--suite", "nope"]])
def test_invalid_arguments(capsys, tmp_path, argv):
    argv = [a if a != "x" else str(tmp_path / "x") for a in argv]
    assert run(capsys, *argv)[0] == 1
