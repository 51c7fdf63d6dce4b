"""Acceptance suite: one test per release criterion, each printing a PASS/FAIL line.

The desk-scale tests share one training run (session fixture) and take tens
of minutes on a single core; they are marked ``slow``.
"""
import io
import time

import numpy as np
import pytest
from scipy.stats import mannwhitneyu

from recurad import preset
from recurad.crd import train_stage3
from recurad.evalmetrics import auroc, evaluate
from recurad.pipeline import (
    BaselineScorer, Checkpoint, detector_from_checkpoint, run_inference, run_training, stage_path,
)
from recurad.pipeline.detector import Detector
from recurad.pipeline.selftest import (
    SelftestReport, check_adjoints, check_masks, check_ops, check_rcae_end_to_end,
)
from recurad.pipeline.train import build_models, resolve_dataset
from recurad.rcae import RcaeModel, build_convae_baseline, train_convae
from recurad.tensorcore import Tensor, no_grad

from conftest import tiny_config


def test_gradient_checks(verdict):
    start = time.perf_counter()
    report = SelftestReport()
    check_ops(report)
    check_rcae_end_to_end(report)
    check_adjoints(report)
    seconds = time.perf_counter() - start
    worst = max(report.checks, key=lambda c: c.value / c.tol if c.tol else c.value)
    ok = report.ok and seconds < 120
    verdict(ok, f"{len(report.checks)} checks, worst {worst.name} {worst.value:.2e} (tol {worst.tol:g}), "
                f"{seconds:.1f}s")
    assert report.ok, report.render()
    assert seconds < 120


def test_weight_sharing_invariant(verdict):
    counts, blobs = set(), set()
    for depth in range(1, 6):
        model = RcaeModel(3, 8, depth, np.random.default_rng(0))
        counts.add(model.num_parameters())
        buf = io.BytesIO()
        np.savez(buf, **model.state_dict())
        blobs.add(buf.getvalue())
    model = RcaeModel(3, 8, 5, np.random.default_rng(0))
    x = np.random.default_rng(1).uniform(0, 1, (1, 3, 64, 64)).astype(np.float32)
    with no_grad():
        ladder = [c.shape[-2:] for c in model.compress(Tensor(x), 5)]
    expected = [(64 // 2 ** i, 64 // 2 ** i) for i in range(1, 6)]
    ok = len(counts) == 1 and len(blobs) == 1 and ladder == expected
    verdict(ok, f"{counts.pop()} params at every depth, ladder {[h for h, _ in ladder]}")
    assert ok


def test_oracle_equivalence(verdict):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 51))
        labels = rng.integers(0, 2, n)
        labels[:2] = (0, 1)
        scores = rng.integers(0, 6, n) / 6.0
        u = mannwhitneyu(scores[labels == 1], scores[labels == 0], method="asymptotic").statistic
        oracle = u / ((labels == 1).sum() * (labels == 0).sum())
        worst = max(worst, abs(auroc(scores, labels) - oracle))
    report = SelftestReport()
    check_masks(report, seed=11, draws=1000)
    mask_bad = sum(int(c.value) for c in report.checks)
    ok = worst == 0.0 and report.ok
    verdict(ok, f"auroc max deviation {worst:g} over 100 instances; {mask_bad} mask mismatches in 3x1000 draws")
    assert worst == 0.0
    assert report.ok, report.render()


@pytest.fixture(scope="session")
def desk(tmp_path_factory):
    cfg = preset("desk")
    dataset = resolve_dataset(cfg)
    out = tmp_path_factory.mktemp("desk")
    start = time.perf_counter()
    ckpt = run_training(cfg, out_dir=out, dataset=dataset)
    train_seconds = time.perf_counter() - start
    det = detector_from_checkpoint(ckpt)
    reports = {}
    for mode in ("rcae", "dpn", "full"):
        reports[mode] = evaluate(det.with_mode(mode), dataset, cfg.k_fraction)
    seconds = time.perf_counter() - start
    return dict(cfg=cfg, dataset=dataset, out=out, ckpt=ckpt, reports=reports,
                train_seconds=train_seconds, seconds=seconds)


@pytest.mark.slow
def test_desk_end_to_end(desk, verdict):
    full = desk["reports"]["full"]
    ok = full.pixel_auroc >= 0.95 and full.image_auroc >= 0.95 and desk["seconds"] < 1800
    verdict(ok, f"pixel {full.pixel_auroc:.4f} image {full.image_auroc:.4f} (bar 0.95), "
                f"train+eval {desk['seconds'] / 60:.1f} min")
    assert desk["seconds"] < 1800
    assert full.pixel_auroc >= 0.95
    assert full.image_auroc >= 0.95


@pytest.mark.slow
def test_component_ordering(desk, verdict):
    cfg, dataset = desk["cfg"], desk["dataset"]
    baseline = build_convae_baseline(cfg.channels, cfg.hidden_width, cfg.depth, np.random.default_rng([cfg.seed, 104]))
    train_convae(baseline, dataset.train_array(), cfg)
    base = evaluate(BaselineScorer(baseline), dataset, cfg.k_fraction).pixel_auroc
    r = {m: desk["reports"][m].pixel_auroc for m in ("rcae", "dpn", "full")}
    ok = base < r["rcae"] < r["dpn"] <= r["full"]
    verdict(ok, f"pixel auroc convae {base:.4f} < rcae {r['rcae']:.4f} < +detail {r['dpn']:.4f} "
                f"<= full {r['full']:.4f}")
    assert ok


def _retrain_crd(ckpt: Checkpoint, steps, dataset) -> float:
    cfg = ckpt.config.replace(crd_steps=tuple(steps))
    models = build_models(cfg)
    models.rcae.load_state_dict(ckpt.group("rcae"))
    models.dpn.load_state_dict(ckpt.group("dpn"))
    train_stage3(models.crd, models.rcae, models.dpn, dataset.train_array(), cfg,
                 np.random.default_rng([cfg.seed, 3]))
    det = Detector(cfg, models.rcae, models.dpn, models.crd, "full")
    return evaluate(det, dataset, cfg.k_fraction).pixel_auroc


@pytest.mark.slow
def test_recursion_step_subsets(desk, verdict):
    ckpt, dataset = desk["ckpt"], desk["dataset"]
    n = desk["cfg"].depth
    every = desk["reports"]["full"].pixel_auroc
    odd = _retrain_crd(ckpt, range(1, n + 1, 2), dataset)
    last = _retrain_crd(ckpt, (n,), dataset)
    tol = 0.01
    chain = every >= odd - tol and odd >= last - tol
    never_worst = every >= min(odd, last)
    ok = chain and never_worst
    verdict(ok, f"all steps {every:.4f}, odd steps {odd:.4f}, last step {last:.4f} (noise {tol})")
    assert ok


@pytest.mark.slow
def test_detail_network_sharpens(desk, verdict):
    raw = desk["reports"]["rcae"].mean_ssim
    enhanced = desk["reports"]["dpn"].mean_ssim
    verdict(enhanced > raw, f"ssim on clean images: detail-enhanced {enhanced:.4f} vs raw {raw:.4f}")
    assert enhanced > raw


@pytest.mark.slow
def test_freeze_contracts(desk, verdict):
    out = desk["out"]
    ck = {s: Checkpoint.load(stage_path(out, s)) for s in (1, 2, 3)}

    def digest(c, group):
        return {k: v.tobytes() for k, v in c.group(group).items()}

    rcae_same = digest(ck[1], "rcae") == digest(ck[2], "rcae") == digest(ck[3], "rcae")
    dpn_same = digest(ck[2], "dpn") == digest(ck[3], "dpn")
    dpn_trained = digest(ck[1], "dpn") != digest(ck[2], "dpn")
    ok = rcae_same and dpn_same and dpn_trained
    verdict(ok, f"autoencoder fixed after stage 1: {rcae_same}; detail net fixed after stage 2: {dpn_same}")
    assert ok


def test_determinism(tmp_path, verdict):
    cfg = tiny_config(depth=2, resolution=16, hidden_width=4, synth_train_count=6, synth_test_count=6)
    artefacts = []
    for run in ("a", "b"):
        out = tmp_path / run
        ckpt = run_training(cfg, out_dir=out)
        data = resolve_dataset(cfg)
        images = [s.image for c in data.categories.values() for s in c.test]
        run_inference(ckpt, images, out_dir=out / "maps")
        evaluate(detector_from_checkpoint(ckpt), data, cfg.k_fraction).to_csv(out / "report.csv")
        files = sorted(p for p in out.rglob("*") if p.is_file())
        artefacts.append({p.relative_to(out): p.read_bytes() for p in files})
    a, b = artefacts
    differing = [str(k) for k in a if a[k] != b.get(k)]
    ok = a.keys() == b.keys() and not differing
    verdict(ok, f"{len(a)} files compared (checkpoints, maps, scores, report), {len(differing)} differ")
    assert ok, differing
