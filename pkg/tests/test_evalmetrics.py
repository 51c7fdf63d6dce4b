import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from skimage.metrics import peak_signal_noise_ratio, structural_similarity

from recurad import dataio
from recurad.evalmetrics import (
    PSNR_CAP, EvalReport, MetricError, auroc, auroc_exhaustive, evaluate, image_score_topk, psnr, ssim,
    topk_count,
)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=50))
def test_auroc_equals_pairwise_oracle(pairs):
    scores = [s / 6 for s, _ in pairs]
    labels = [y for _, y in pairs]
    if len(set(labels)) < 2:
        with pytest.raises(MetricError):
            auroc(scores, labels)
        return
    assert auroc(scores, labels) == auroc_exhaustive(scores, labels)


def test_auroc_known_values():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75
    assert auroc([1, 1, 1, 1], [0, 1, 0, 1]) == 0.5
    assert auroc([0, 1], [0, 1]) == 1.0
    assert auroc([0, 1], [1, 0]) == 0.0


def test_auroc_is_rank_invariant():
    rng = np.random.default_rng(0)
    s, y = rng.standard_normal(100), rng.integers(0, 2, 100)
    assert auroc(s, y) == pytest.approx(auroc(np.exp(3 * s), y), abs=1e-12)


def test_topk():
    assert topk_count(1000, 0.001) == 1
    assert topk_count(64 * 64, 0.001) == 5
    assert topk_count(10, 1.0) == 10
    m = np.zeros((1, 10, 10))
    m[0, 0, :3] = [1.0, 0.5, 0.25]
    assert image_score_topk(m, 0.02) == pytest.approx(0.75)
    assert image_score_topk(m, 1.0) == pytest.approx(1.75 / 100)
    with pytest.raises(ValueError):
        topk_count(10, 0.0)


def test_psnr_against_skimage_and_cap():
    rng = np.random.default_rng(1)
    a = rng.uniform(0, 1, (3, 16, 16))
    b = np.clip(a + rng.normal(0, 0.05, a.shape), 0, 1)
    assert psnr(a, b) == pytest.approx(peak_signal_noise_ratio(a, b, data_range=1.0), rel=1e-12)
    assert psnr(a, a) == PSNR_CAP


def test_psnr_known_value():
    a = np.zeros((4, 4))
    assert psnr(a, a + 0.1) == pytest.approx(20.0)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ssim_against_skimage(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0, 1, (3, 32, 32))
    b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, channel_axis=0, gaussian_weights=True,
                                sigma=1.5, use_sample_covariance=False)
    assert ssim(a, b) == pytest.approx(ref, abs=1e-10)


def test_ssim_identity_and_errors():
    a = np.random.default_rng(0).uniform(0, 1, (16, 16))
    assert ssim(a, a) == pytest.approx(1.0)
    with pytest.raises(MetricError):
        ssim(a[:8, :8], a[:8, :8])
    with pytest.raises(MetricError):
        ssim(a, a[:, :15])


class OracleScorer:
    """Scores each pixel with its true mask value: perfect detection."""

    def __init__(self, dataset):
        self.lookup = {s.image.tobytes(): s for s in dataset.test_samples()}

    def score(self, images):
        maps = []
        for im in images:
            s = self.lookup[im.tobytes()]
            maps.append(s.mask if s.mask is not None else np.zeros((1,) + im.shape[-2:], np.float32))
        return np.stack(maps), images


def test_evaluate_perfect_scorer(tmp_path):
    ds = dataio.generate_synthetic(dataio.SynthSpec(resolution=32, train_count=2, test_count=10))
    report = evaluate(OracleScorer(ds), ds)
    assert isinstance(report, EvalReport)
    assert [c.category for c in report.categories] == ["stripes", "checker"]
    assert report.image_auroc == 1.0 and report.pixel_auroc == 1.0
    assert report.mean_ssim == pytest.approx(1.0) and report.mean_psnr == PSNR_CAP
    out = tmp_path / "r.csv"
    report.to_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0] == "category,i_auroc,p_auroc,ssim,psnr"
    assert lines[-1].startswith("mean,1.000000,1.000000")
    assert "image_auroc=1.0000" in report.summary()


def test_evaluate_needs_both_classes():
    ds = dataio.generate_synthetic(dataio.SynthSpec(resolution=32, train_count=1, test_count=2))
    for cat in ds.categories.values():
        cat.test = [s for s in cat.test if s.label == 0]
    with pytest.raises(MetricError, match="stripes"):
        evaluate(OracleScorer(ds), ds)
