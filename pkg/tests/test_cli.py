import shutil

import pytest

from mtnam.cli import run

SMALL = """\
run.out_dir = out
synth.duration_s = 600
synth.seizures = 100-130, 250-280, 400-430, 500-530
nam.hidden = 10
nam.activations = relu, exu
train.epochs = 30
baselines.lr_l2 = 0.1
baselines.dnn_hidden = 20
baselines.dnn_activations = relu
bench.R = 60
bench.W = 5
"""

# Latency numbers vary run to run; everything else must not.
TIMED = {"bench.csv", "latency.png"}


def snapshot(out):
    return {p.relative_to(out).as_posix(): p.read_bytes()
            for p in sorted(out.rglob("*")) if p.is_file() and p.name not in TIMED}


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "small.cfg"
    cfg.write_text(SMALL)
    assert run(["all", "--config", str(cfg)]) == 0
    return cfg, root / "out"


def test_all_writes_expected_outputs(pipeline):
    _, out = pipeline
    for name in ("recording.csv", "annotations.csv", "features.csv", "nam.model", "lr.model",
                 "dnn.model", "mt1.model", "mt2.model", "mt4.model", "grid_report.csv",
                 "split.csv", "distill_report.csv", "metrics.csv", "metrics_t3a.csv",
                 "stream_mt4.csv", "h0_nam.csv", "bench.csv"):
        assert (out / name).is_file(), name
    for fig in ("feature_functions.png", "flops.png", "latency.png"):
        assert (out / "figures" / fig).stat().st_size > 0
    assert (out / "features.csv").read_text().startswith("# mtnam extract config_hash=")
    bench = (out / "bench.csv").read_text()
    assert "flop_rules=v1" in bench and "nam_h100_M207" in bench


def test_rerun_is_byte_identical(pipeline, tmp_path):
    cfg, out = pipeline
    assert run(["all", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert snapshot(tmp_path) == snapshot(out)


def test_stage_isolation(pipeline, tmp_path):
    cfg, out = pipeline
    shutil.copytree(out, tmp_path, dirs_exist_ok=True)
    for name in ("mt1.model", "mt2.model", "mt4.model", "distill_report.csv"):
        (tmp_path / name).unlink()
    assert run(["distill", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    assert snapshot(tmp_path) == snapshot(out)


def test_seed_override_changes_data(pipeline, tmp_path):
    cfg, out = pipeline
    assert run(["synth", "--config", str(cfg), "--out", str(tmp_path), "--seed", "99"]) == 0
    assert (tmp_path / "recording.csv").read_bytes() != (out / "recording.csv").read_bytes()


def test_missing_upstream_artifact(tmp_path, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(SMALL)
    assert run(["distill", "--config", str(cfg)]) == 3
    assert "nam.model" in capsys.readouterr().err


def test_missing_config(tmp_path):
    assert run(["train", "--config", str(tmp_path / "absent.cfg")]) == 3


@pytest.mark.parametrize("text", ["run.seed = soon\n", "run.unknown_key = 1\n", "nonsense line\n",
                                  "synth.seizures = 700-720\nsynth.duration_s = 600\n"])
def test_config_errors_exit_2(tmp_path, text, capsys):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(text)
    assert run(["synth", "--config", str(cfg)]) == 2
    assert capsys.readouterr().err.startswith("mtnam: error:")


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_4(pipeline, tmp_path):
    cfg, out = pipeline
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMALL + "train.lr = 1e300\nbaselines.enabled = no\n")
    shutil.copy(out / "features.csv", tmp_path / "features.csv")
    shutil.copy(out / "annotations.csv", tmp_path / "annotations.csv")
    assert run(["train", "--config", str(bad), "--out", str(tmp_path)]) == 4
