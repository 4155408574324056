import numpy as np
import pytest

from camsim import cli
from camsim.dataset import read_raw


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert cli.main(["synth", "--out", str(d / "data"), "--scenes", "2", "--size", "32"]) == 0
    return d


def test_synth_writes_sequences(workdir):
    assert sorted(p.name for p in (workdir / "data").iterdir()) == ["scene_0000", "scene_0001"]


def test_train_then_eval(workdir, capsys):
    rc = cli.main(["train", "--data", str(workdir / "data"), "--out", str(workdir / "model"),
                   "--noise-epochs", "1", "--aperture-epochs", "1", "--joint-epochs", "1",
                   "--pairs-per-epoch", "2", "--patch-size", "16", "--width", "4",
                   "--report", str(workdir / "rep")])
    assert rc == 0
    assert (workdir / "rep" / "loss_curves.png").stat().st_size > 0
    assert "stage,step,loss" in capsys.readouterr().out
    rc = cli.main(["eval", "--model", str(workdir / "model"), "--data", str(workdir / "data"),
                   "--out", str(workdir / "e.csv"), "--figure", str(workdir / "e.png")])
    assert rc == 0
    assert (workdir / "e.csv").read_text().startswith("metric,EXP,NS,Full")
    assert (workdir / "e.png").exists()


def test_simulate_with_config_override(workdir, capsys):
    frame = workdir / "data" / "scene_0000" / "frame_000.nrs"
    cfg = workdir / "sim.cfg"
    cfg.write_text(f"input = {frame}\nout = {workdir / 'cfg.nrs'}\niso = 200\ntime = 1/50\n")
    rc = cli.main(["simulate", "--config", str(cfg), "--iso", "100",
                   "--preview", str(workdir / "p.png")])
    assert rc == 0
    out = read_raw(workdir / "cfg.nrs")
    assert out.settings.iso == 100 and out.settings.t == pytest.approx(0.02)
    assert (workdir / "p.png").exists()


def test_hdr_and_autoexpose(workdir, capsys):
    frame = workdir / "data" / "scene_0000" / "frame_000.nrs"
    assert cli.main(["hdr", "--input", str(frame), "--out", str(workdir / "h.png")]) == 0
    assert cli.main(["autoexpose", "--input", str(frame), "--out", str(workdir / "a.csv"),
                     "--figure", str(workdir / "a.png")]) == 0
    lines = (workdir / "a.csv").read_text().splitlines()
    assert lines[0] == "candidate,t,iso,fnumber,score" and len(lines) == 65
    assert "# best:" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    [],
    ["bogus"],
    ["synth"],
    ["synth", "--out", "x", "--scenes", "many"],
    ["synth", "--out", "x", "--size", "7"],
])
def test_usage_errors_exit_one(argv, capsys):
    assert cli.main(argv) == 1


def test_unknown_config_key_is_usage_error(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("frobnicate = 3\n")
    assert cli.main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 1


def test_data_errors_exit_two(tmp_path):
    bad = tmp_path / "bad.nrs"
    bad.write_bytes(b"JUNKJUNK")
    assert cli.main(["simulate", "--input", str(bad), "--out", str(tmp_path / "o.nrs")]) == 2
    assert cli.main(["simulate", "--input", str(tmp_path / "missing.nrs"),
                     "--out", str(tmp_path / "o.nrs")]) == 2
    assert cli.main(["eval", "--data", str(tmp_path)]) == 2


def test_numeric_failure_exits_three(monkeypatch, tmp_path):
    def boom(args):
        np.log(np.array([-1.0]))

    monkeypatch.setitem(cli.COMMANDS, "synth", boom)
    assert cli.main(["synth", "--out", str(tmp_path)]) == 3
