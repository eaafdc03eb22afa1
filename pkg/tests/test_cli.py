import json

import pytest

from sdgzsl.cli import main, tc_bench_passed
from sdgzsl.data import load_bundle
from sdgzsl.trainer import TrainLog

TINY = ["--set", "train.latent_dim=4", "--set", "train.hs_dim=4", "--set", "train.cvae_hidden=16",
        "--set", "train.generator_hidden=16", "--set", "train.decoder_hidden=16",
        "--set", "train.relation_hidden=8", "--set", "train.n_syn=10"]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["-q", "synth-data", "--out", str(out), "--set", "synthetic.per_class=20"]) == 0
    return out


def test_synth_data_reloads(data_dir):
    bundle = load_bundle(data_dir / "manifest.json")
    assert bundle.features.shape[0] == 200
    resolved = json.loads((data_dir / "resolved_config.json").read_text())
    assert resolved["synthetic"]["per_class"] == 20 and resolved["synthetic"]["attr_dim"] == 4


def test_synth_data_same_seed_same_bytes(tmp_path):
    for name in ("a", "b"):
        assert main(["-q", "synth-data", "--out", str(tmp_path / name), "--seed", "3",
                     "--set", "synthetic.per_class=5"]) == 0
    assert (tmp_path / "a" / "data.sdt").read_bytes() == (tmp_path / "b" / "data.sdt").read_bytes()


def test_synth_data_invalid_spec(tmp_path, capsys):
    assert main(["-q", "synth-data", "--out", str(tmp_path), "--set", "synthetic.feature_dim=2"]) == 1
    assert "feature_dim" in capsys.readouterr().err


def test_unknown_spec_key(tmp_path):
    assert main(["-q", "synth-data", "--out", str(tmp_path), "--set", "synthetic.colour=1"]) == 1


def test_train_eval_retrieve(data_dir, tmp_path, capsys):
    manifest = str(data_dir / "manifest.json")
    run = tmp_path / "run"
    assert main(["-q", "train", "--data", manifest, "--out", str(run), "--preset", "synthetic",
                 "--epochs", "2", *TINY]) == 0
    resolved = json.loads((run / "resolved_config.json").read_text())
    assert resolved["train"]["epochs"] == 2 and resolved["train"]["feature_dim"] == 32
    assert len(TrainLog.read_csv(run / "train_log.csv").records) == 2

    ev = tmp_path / "eval"
    assert main(["-q", "eval", "--data", manifest, "--ckpt", str(run / "checkpoint.sdt"), "--out", str(ev),
                 "--rep", "hn", "--set", "eval.classifier_epochs=2"]) == 0
    report = json.loads((ev / "report.json").read_text())
    for key in ("U", "S", "H", "T1", "per_class_accuracy", "retrieval_map", "confusion"):
        assert key in report
    assert (ev / "confusion_counts.csv").exists() and (ev / "confusion_percent.csv").exists()

    capsys.readouterr()
    assert main(["-q", "retrieve", "--data", manifest, "--ckpt", str(run / "checkpoint.sdt"),
                 "--ratios", "1.0,0.5", "--out", str(tmp_path / "ret")]) == 0
    out = capsys.readouterr().out
    assert "mAP" in out and (tmp_path / "ret" / "retrieval.csv").exists()


def test_resume_equals_uninterrupted(data_dir, tmp_path):
    manifest = str(data_dir / "manifest.json")
    base = ["-q", "train", "--data", manifest, "--preset", "synthetic", *TINY]
    assert main([*base, "--epochs", "3", "--out", str(tmp_path / "full")]) == 0
    assert main([*base, "--epochs", "1", "--out", str(tmp_path / "part")]) == 0
    assert main(["-q", "train", "--data", manifest, "--epochs", "3", "--out", str(tmp_path / "part"),
                 "--resume", str(tmp_path / "part" / "checkpoint.sdt")]) == 0
    for name in ("checkpoint.sdt", "train_log.csv"):
        assert (tmp_path / "full" / name).read_bytes() == (tmp_path / "part" / name).read_bytes()


def test_ablation_recorded(data_dir, tmp_path):
    assert main(["-q", "train", "--data", str(data_dir / "manifest.json"), "--out", str(tmp_path),
                 "--preset", "synthetic", "--epochs", "1", "--ablation", "no-tc", *TINY]) == 0
    weights = json.loads((tmp_path / "resolved_config.json").read_text())["train"]["weights"]
    assert weights["tc"] == 0 and weights["dis"] == 0 and weights["relation"] == 5


def test_missing_files_exit_1(tmp_path):
    assert main(["-q", "train", "--data", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 1
    assert main(["-q", "eval", "--data", str(tmp_path / "nope.json"), "--ckpt", "x", "--out", str(tmp_path)]) == 1


def test_usage_error_exit_1(capsys):
    assert main(["frobnicate"]) == 1
    assert main(["train"]) == 1


def test_bad_thread_env(monkeypatch, tmp_path):
    monkeypatch.setenv("SDGZSL_THREADS", "many")
    assert main(["-q", "synth-data", "--out", str(tmp_path)]) == 1


def test_thread_env_accepted(monkeypatch, tmp_path):
    monkeypatch.setenv("SDGZSL_THREADS", "1")
    assert main(["-q", "synth-data", "--out", str(tmp_path), "--set", "synthetic.per_class=5"]) == 0


def test_gradcheck_passes(tmp_path):
    assert main(["-q", "gradcheck", "--seeds", "1", "--out", str(tmp_path)]) == 0
    assert (tmp_path / "gradcheck.csv").exists()


def test_gradcheck_impossible_tolerance_exit_2():
    assert main(["-q", "gradcheck", "--seeds", "1", "--tolerance", "0"]) == 2


def test_tc_bench_independent(tmp_path, capsys):
    assert main(["-q", "tc-bench", "--rho", "0", "--steps", "300", "--n-train", "5000", "--n-eval", "5000",
                 "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert "0.0000" in out.splitlines()[1]


def test_tc_bench_threshold_rule():
    assert tc_bench_passed(0.0, 0.0, 0.04)
    assert not tc_bench_passed(0.0, 0.0, 0.06)
    assert tc_bench_passed(0.5, 0.575, 0.65)
    assert not tc_bench_passed(0.5, 0.575, 0.70)
