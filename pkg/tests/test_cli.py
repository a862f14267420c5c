import re
import subprocess
import sys

import pytest

from mammocnn.cli import DATA_ROOT_ENV, build_parser, main
from mammocnn.config import load_config
from mammocnn.evaluation import MetricsReport


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory, synth_root):
    """prepare -> split -> roi -> augment -> train -> eval on the synthetic corpus."""
    w = tmp_path_factory.mktemp("run")
    assert run("prepare", "--root", synth_root, "--out", w / "manifest.csv") == 0
    assert run("split", "--manifest", w / "manifest.csv", "--ratios", "0.5,0.25,0.25", "--seed", 3,
               "--out", w / "split.csv") == 0
    assert run("roi", "--manifest", w / "manifest.csv", "--strategy", "large", "--size", 32,
               "--out", w / "patches") == 0
    assert run("augment", "--patches", w / "patches", "--manifest", w / "manifest.csv", "--split", w / "split.csv",
               "--rotations", 2, "--crops", 2, "--out", w / "aug") == 0
    (w / "run.cfg").write_text(
        "# tiny smoke run\npreset = baseline\ninput_side = 32\nmax_epochs = 2\nbatch_size = 8\n"
        "n_rotations = 2\nn_crops_per_rotation = 2\n"
    )
    assert run("train", "--config", w / "run.cfg", "--split", w / "split.csv", "--patches", w / "patches",
               "--manifest", w / "manifest.csv", "--augmented", w / "aug", "--out", w / "rundir") == 0
    assert run("eval", "--checkpoint", w / "rundir" / "checkpoints" / "best", "--split", w / "split.csv",
               "--patches", w / "patches", "--out", w / "rundir" / "metrics.txt") == 0
    return w


def test_chain_outputs(pipeline):
    rd = pipeline / "rundir"
    for name in ("config.snapshot", "curve.csv", "val.csv", "log.txt", "model_summary.txt",
                 "checkpoints/best", "checkpoints/last", "metrics.txt", "predictions.csv"):
        assert (rd / name).exists(), name
    report, extra = MetricsReport.from_text((rd / "metrics.txt").read_text())
    assert report.n_items > 0 and extra["subset"] == "test"
    assert (pipeline / "aug" / "augmented.csv").is_file()


def test_snapshot_relaunches_identical_run(pipeline):
    snap = load_config(pipeline / "rundir" / "config.snapshot")
    assert snap.split.endswith("split.csv") and snap.augmented.endswith("aug")
    assert snap.max_epochs == 2 and snap.input_side == 32
    assert f"fingerprint {snap.fingerprint}" in (pipeline / "rundir" / "log.txt").read_text()


def test_log_is_iso8601(pipeline):
    lines = (pipeline / "rundir" / "log.txt").read_text().splitlines()
    assert lines and all(re.match(r"\d{4}-\d\d-\d\dT\d\d:\d\d:\d\d[+-]\d{4} ", l) for l in lines)


def test_saliency_and_report(pipeline, capsys):
    rid = (pipeline / "patches" / "patches.csv").read_text().splitlines()[1].split(",")[0]
    assert run("saliency", "--checkpoint", pipeline / "rundir" / "checkpoints" / "best", "--records", rid,
               "--patches", pipeline / "patches", "--out", pipeline / "sal.png") == 0
    assert (pipeline / "sal.png").stat().st_size > 0
    capsys.readouterr()
    assert run("report", "--runs", pipeline / "rundir", "--reference") == 0
    out = capsys.readouterr().out
    assert "0.929" in out and "rundir" in out


def test_split_is_byte_identical(pipeline, tmp_path):
    for name in ("a.csv", "b.csv"):
        assert run("split", "--manifest", pipeline / "manifest.csv", "--seed", 7,
                   "--ratios", "0.5,0.25,0.25", "--out", tmp_path / name) == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_inputs_not_mutated(pipeline, tmp_path):
    before = (pipeline / "manifest.csv").read_bytes()
    run("split", "--manifest", pipeline / "manifest.csv", "--ratios", "0.5,0.25,0.25", "--out", tmp_path / "s.csv")
    assert (pipeline / "manifest.csv").read_bytes() == before


def test_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as e:
        run("split", "--bogus")
    assert e.value.code == 2
    assert "usage:" in capsys.readouterr().err


def test_unknown_subcommand_exits_2():
    proc = subprocess.run([sys.executable, "-m", "mammocnn", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2 and "usage:" in proc.stderr


def test_failure_is_one_line(tmp_path, capsys):
    assert run("split", "--manifest", tmp_path / "missing.csv", "--out", tmp_path / "s.csv") == 1
    err = capsys.readouterr().err.strip()
    assert len(err.splitlines()) == 1 and err.startswith("error: FileNotFoundError: ")


def test_prepare_uses_env_root(monkeypatch, synth_root, tmp_path):
    monkeypatch.setenv(DATA_ROOT_ENV, str(synth_root))
    assert run("prepare", "--out", tmp_path / "m.csv") == 0
    monkeypatch.delenv(DATA_ROOT_ENV)
    assert run("prepare", "--out", tmp_path / "m2.csv") == 1


def test_help_documents_every_flag():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.choices and "train" in a.choices).choices
    assert set(sub) == {"prepare", "split", "roi", "augment", "train", "eval", "saliency", "report"}
    for name, p in sub.items():
        text = p.format_help()
        for action in p._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)
