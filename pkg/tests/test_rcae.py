import numpy as np
import pytest

from recurad.config import PipelineConfig
from recurad.rcae import (
    ConvAE, ConvUnit, RcaeModel, build_convae_baseline, rcae_loss, reconstruct_numpy, sample_depth,
    train_convae, train_stage1,
)
from recurad.tensorcore import DimensionError, Tensor, UsageError, gradcheck, no_grad


def model(depth=3, **kw):
    return RcaeModel(3, 8, depth, np.random.default_rng(0), **kw)


def test_conv_unit_preserves_shape():
    unit = ConvUnit(3, 8, 3, np.random.default_rng(0))
    assert unit(Tensor(np.zeros((2, 3, 8, 8)))).shape == (2, 3, 8, 8)


def test_compress_ladder_and_reconstruction_shape():
    m = model(5)
    x = Tensor(np.random.default_rng(1).uniform(0, 1, (1, 3, 64, 64)))
    with no_grad():
        codes = m.compress(x, 5)
        assert [c.shape[-1] for c in codes] == [32, 16, 8, 4, 2]
        assert all(c.shape[1] == 3 for c in codes)
        for n in range(1, 6):
            r = m(x, n).data
            assert r.shape == x.shape and r.min() >= 0 and r.max() <= 1


def test_parameter_count_independent_of_depth():
    counts = {model(n).num_parameters() for n in (1, 3, 5, 8)}
    assert len(counts) == 1


def test_unshared_baseline_has_more_parameters():
    assert model(3, share_weights=False).num_parameters() > model(3).num_parameters()
    assert build_convae_baseline(3, 8, 3).num_parameters() > 0
    assert model(1, share_weights=False).num_parameters() == model(1).num_parameters()


def test_trace_matches_individual_depths():
    m = model(3)
    x = Tensor(np.random.default_rng(2).uniform(0, 1, (2, 3, 16, 16)))
    with no_grad():
        trace = m.run_trace(x, 3)
        for n, r in enumerate(trace.reconstructions, start=1):
            np.testing.assert_array_equal(r.data, m(x, n).data)
    assert trace.depth == 3


def test_intermediate_trace_shapes():
    m = model(3)
    x = Tensor(np.zeros((1, 3, 16, 16)))
    with no_grad():
        trace = m.run_trace(x, 3, intermediate=True)
    assert [r.shape for r in trace.reconstructions] == [(1, 3, 16, 16)] * 3
    # last entry equals the full reconstruction
    with no_grad():
        np.testing.assert_allclose(trace.reconstructions[-1].data, m(x, 3).data, rtol=1e-6)


def test_cross_skips_change_output_but_not_parameters():
    a, b = model(3), model(3, cross_skips=True)
    assert a.num_parameters() == b.num_parameters()
    x = Tensor(np.random.default_rng(3).uniform(0, 1, (1, 3, 16, 16)))
    with no_grad():
        assert not np.allclose(a(x, 3).data, b(x, 3).data)
        np.testing.assert_array_equal(a(x, 1).data, b(x, 1).data)


@pytest.mark.parametrize("hw,depth", [((15, 16), 1), ((24, 24), 4)])
def test_indivisible_resolution_rejected(hw, depth):
    with pytest.raises(DimensionError):
        model(5)(Tensor(np.zeros((1, 3) + hw)), depth)


def test_bad_depth_and_channels():
    with pytest.raises(DimensionError):
        model(3)(Tensor(np.zeros((1, 3, 16, 16))), 4)
    with pytest.raises(DimensionError):
        model(3)(Tensor(np.zeros((1, 1, 16, 16))), 1)
    with pytest.raises(ValueError):
        RcaeModel(3, 8, 0)


def test_end_to_end_gradient_float64():
    m = RcaeModel(3, 4, 2, np.random.default_rng(5))
    for p in m.parameters():
        p.data = p.data.astype(np.float64)
    x = Tensor(np.random.default_rng(6).uniform(0, 1, (1, 3, 8, 8)))
    err = gradcheck(lambda: rcae_loss(x, m(x, 2)), m.parameters(), eps=1e-6, max_probes=50,
                    rng=np.random.default_rng(7))
    assert err <= 1e-2


def test_sample_depth_covers_range():
    rng = np.random.default_rng(0)
    seen = {sample_depth(rng, 4) for _ in range(200)}
    assert seen == {1, 2, 3, 4}


def tiny_cfg(**kw):
    base = dict(depth=2, resolution=16, hidden_width=4, epochs_stage1=3, epochs_stage2=1, epochs_stage3=1,
                lr=3e-3, seed=1, synth_train_count=4, synth_test_count=4, crd_widths=(2, 2, 2, 2))
    base.update(kw)
    return PipelineConfig(**base).validate()


def test_train_stage1_reduces_loss_and_is_deterministic():
    images = np.random.default_rng(0).uniform(0, 1, (8, 3, 16, 16)).astype(np.float32)
    cfg = tiny_cfg(epochs_stage1=4)
    runs = []
    for _ in range(2):
        m = RcaeModel(3, 4, 2, np.random.default_rng(3))
        losses = []
        train_stage1(m, images, cfg, np.random.default_rng(9), lambda s, e, l: losses.append(l))
        runs.append((m.param_hash(), losses))
    assert runs[0] == runs[1]
    assert runs[0][1][-1] < runs[0][1][0]


def test_train_rejects_empty_dataset():
    with pytest.raises(UsageError):
        train_stage1(model(2), np.zeros((0, 3, 16, 16)), tiny_cfg())


def test_convae_baseline_trains_at_fixed_depth():
    images = np.random.default_rng(0).uniform(0, 1, (4, 3, 16, 16)).astype(np.float32)
    m = ConvAE(3, 4, 2, np.random.default_rng(0))
    before = m.param_hash()
    train_convae(m, images, tiny_cfg(epochs_stage1=1))
    assert m.param_hash() != before
    assert reconstruct_numpy(m, images).shape == images.shape
