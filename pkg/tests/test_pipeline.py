import csv

import numpy as np
import pytest

from conftest import tiny_config
from recurad import dataio
from recurad.config import ConfigError, PipelineConfig, preset
from recurad.pipeline import (
    Checkpoint, CheckpointError, Detector, StageError, build_models, detector_from_checkpoint,
    run_inference, run_training, stage_path,
)
from recurad.pipeline.cli import main
from recurad.pipeline.selftest import run_selftest
from recurad.tensorcore import UsageError


# config

def test_config_text_roundtrip(tiny):
    text = tiny.to_text()
    assert PipelineConfig.from_text(text) == tiny
    assert all(" = " in line for line in text.splitlines())


def test_config_comments_and_base():
    cfg = PipelineConfig.from_text("# comment\ndepth = 3  # inline\nresolution=64\n", base=preset("desk"))
    assert cfg.depth == 3 and cfg.resolution == 64 and cfg.seed == 7


@pytest.mark.parametrize("text", ["depth = 3\nresolution = 60", "epochs_stage2 = 0", "bogus = 1",
                                  "depth", "depth = three", "crd_steps = 4", "k_fraction = 0"])
def test_config_validation(text):
    with pytest.raises(ConfigError):
        PipelineConfig.from_text(text, base=preset("desk"))


def test_presets():
    desk, paper = preset("desk"), preset("paper")
    assert (desk.depth, desk.resolution, desk.seed) == (3, 64, 7)
    assert (desk.epochs_stage1, desk.epochs_stage2, desk.epochs_stage3) == (30, 10, 10)
    assert (paper.depth, paper.resolution) == (5, 1024)
    assert (paper.epochs_stage1, paper.epochs_stage2, paper.epochs_stage3) == (1500, 400, 300)
    assert desk.steps == (1, 2, 3) and desk.replace(crd_steps=(3, 1)).steps == (1, 3)
    with pytest.raises(ConfigError):
        preset("laptop")


# checkpoints

def test_checkpoint_roundtrip_is_byte_exact(tiny, tmp_path):
    models = build_models(tiny)
    ck = Checkpoint(tiny, 2, models.params(), {"state": [1, 2]})
    path = ck.save(tmp_path / "c.ckpt")
    back = Checkpoint.load(path)
    assert back.config == tiny and back.stage == 2 and back.rng_state == {"state": [1, 2]}
    assert back.to_bytes() == ck.to_bytes()
    for k, v in ck.params.items():
        assert back.params[k].dtype == np.float32
        np.testing.assert_array_equal(back.params[k], v)


def test_checkpoint_rejects_garbage(tmp_path):
    with pytest.raises(CheckpointError):
        Checkpoint.from_bytes(b"NOTACKPT" + bytes(20))


def test_checkpoint_header_is_self_describing(tiny):
    raw = Checkpoint(tiny, 1, build_models(tiny).params()).to_bytes()
    assert raw[:8] == b"RCAECKPT"
    assert b'"dtype":"float32-le"' in raw and b'"rcae.encoders.0.down.weight"' in raw


# training orchestration

def test_full_run_writes_stage_files_and_log(tiny, tmp_path):
    ck = run_training(tiny, tmp_path)
    assert ck.stage == 3
    assert all(stage_path(tmp_path, k).exists() for k in (1, 2, 3))
    lines = (tmp_path / "train.log").read_text().splitlines()
    assert lines[0].startswith("stage=1 epoch=0 loss=") and lines[-1].startswith("stage=3 epoch=0")


def test_resume_matches_uninterrupted_run(tiny, tmp_path):
    straight = run_training(tiny, tmp_path / "a")
    first = run_training(tiny, tmp_path / "b", stop_after=1)
    assert first.stage == 1
    resumed = run_training(tiny, tmp_path / "b")
    assert resumed.to_bytes() == straight.to_bytes()
    # stage 2 started from the same autoencoder in both runs
    s2a = Checkpoint.load(stage_path(tmp_path / "a", 2)).group("rcae")
    s2b = Checkpoint.load(stage_path(tmp_path / "b", 2)).group("rcae")
    assert all(np.array_equal(s2a[k], s2b[k]) for k in s2a)


def test_resume_refuses_other_config(tiny, tmp_path):
    run_training(tiny, tmp_path, stop_after=1)
    with pytest.raises(StageError, match="different config"):
        run_training(tiny.replace(lr=5e-4), tmp_path)


def test_frozen_upstream_is_unchanged(tiny):
    ck1 = run_training(tiny, stop_after=1)
    ck3 = run_training(tiny)
    for k, v in ck1.group("rcae").items():
        np.testing.assert_array_equal(ck3.group("rcae")[k], v)


def test_bad_dataset_reports_stage(tiny):
    with pytest.raises(StageError, match="stage 1"):
        run_training(tiny.replace(data="/nonexistent/dataset"))


# inference

def test_inference_outputs(tiny, tmp_path):
    ck = run_training(tiny)
    ds = dataio.generate_synthetic(dataio.SynthSpec(resolution=16, train_count=1, test_count=4, seed=3))
    samples = ds.test_samples()
    res = run_inference(ck, samples, out_dir=tmp_path)
    assert len(res) == len(samples)
    assert all(r.anomaly.scores.shape == (1, 16, 16) for r in res)
    rows = list(csv.DictReader(open(tmp_path / "scores.csv")))
    assert [r["path"] for r in rows] == [s.path for s in samples]
    assert [int(r["label"]) for r in rows] == [s.label for s in samples]
    assert len(list(tmp_path.glob("*.png"))) == len(samples)
    again = run_inference(ck, samples[:1])
    assert again[0].anomaly.scores.tobytes() == res[0].anomaly.scores.tobytes()


def test_inference_from_files_resizes(tiny, tmp_path):
    ck = run_training(tiny)
    dataio.write_image(tmp_path / "big.png", np.full((3, 40, 40), 0.5))
    res = run_inference(ck, [tmp_path / "big.png"])
    assert res[0].anomaly.scores.shape == (1, 16, 16)


def test_inference_needs_stage3(tiny):
    ck = run_training(tiny, stop_after=2)
    with pytest.raises(UsageError):
        run_inference(ck, [np.zeros((3, 16, 16))])


def test_detector_modes(tiny):
    det = detector_from_checkpoint(run_training(tiny))
    x = np.random.default_rng(0).uniform(0, 1, (2, 3, 16, 16)).astype(np.float32)
    for mode in ("full", "rcae", "dpn"):
        maps, recon = det.with_mode(mode).score(x)
        assert maps.shape == (2, 1, 16, 16) and recon.shape == x.shape
    with pytest.raises(ValueError):
        det.with_mode("crd-only")


# self-test and CLI

def test_selftest_passes_and_mutation_fails():
    assert run_selftest(mask_draws=50).ok
    bad = run_selftest(mutate="conv_grad", mask_draws=5)
    assert not bad.ok
    assert any(not c.passed and "conv" in c.name for c in bad.checks)


def test_cli_unknown_flag_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--definitely-not-a-flag"])
    assert exc.value.code == 2


def test_cli_selftest_status(capsys):
    assert main(["selftest"]) == 0
    assert main(["selftest", "--mutate", "conv_grad"]) == 1
    assert "FAIL" in capsys.readouterr().out


def test_cli_train_eval_infer_synth(tmp_path, capsys):
    cfg_file = tmp_path / "tiny.cfg"
    tiny_config().save(cfg_file)
    run = tmp_path / "run"
    assert main(["train", "--config", str(cfg_file), "--preset", "desk", "--out-dir", str(run)]) == 0
    assert (run / "stage3.ckpt").exists()
    report = tmp_path / "report.csv"
    assert main(["eval", "--checkpoint", str(run / "stage3.ckpt"), "--out", str(report)]) == 0
    assert report.read_text().splitlines()[0] == "category,i_auroc,p_auroc,ssim,psnr"
    synth = tmp_path / "synth"
    assert main(["synth", "--config", str(cfg_file), "--out-dir", str(synth)]) == 0
    assert (synth / "stripes" / "train" / "good").is_dir()
    assert main(["eval", "--checkpoint", str(run / "stage3.ckpt"), "--data", str(synth),
                 "--mode", "rcae", "--out", str(tmp_path / "r2.csv")]) == 0
    maps = tmp_path / "maps"
    assert main(["infer", "--checkpoint", str(run / "stage3.ckpt"), "--out-dir", str(maps),
                 str(synth / "stripes" / "test")]) == 0
    assert (maps / "scores.csv").exists()


def test_cli_errors_are_reported(tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(tmp_path / "missing.ckpt")]) == 1
    assert main(["train", "--preset", "desk", "--set", "depth=9", "--out-dir", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
