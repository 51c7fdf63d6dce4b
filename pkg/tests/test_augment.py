import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from recurad import augment
from recurad.augment import AugmentConfig


def img(seed=0, size=32):
    return np.random.default_rng(seed).uniform(0, 1, (3, size, size)).astype(np.float32)


GENERATORS = [augment.inject_color_block, augment.inject_copy_paste, augment.inject_lines]


@pytest.mark.parametrize("gen", GENERATORS, ids=lambda g: g.__name__)
def test_mask_equals_pixel_diff_over_many_draws(gen):
    rng = np.random.default_rng(1)
    for _ in range(300):
        x = img(int(rng.integers(1 << 30)))
        pa = gen(x, rng)
        np.testing.assert_array_equal(pa.mask, augment.diff_mask(x, pa.corrupted))
        assert pa.corrupted.dtype == x.dtype and pa.corrupted.shape == x.shape
        assert 0 <= pa.corrupted.min() and pa.corrupted.max() <= 1


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 16), st.floats(0.0, 1.0), st.integers(0, 10_000))
def test_color_block_coverage_count(size, coverage, seed):
    # a constant image and a colour that differs in every channel make the count observable
    x = np.zeros((3, 16, 16), np.float32)
    rng = np.random.default_rng(seed)
    pa = augment.inject_color_block(x, rng, size=size, coverage=coverage)
    changed = int(pa.mask.sum())
    assert changed == round(coverage * size * size)
    y0, x0, s = pa.meta["box"]
    assert pa.mask[0, :y0].sum() == 0 and pa.mask[0, :, :x0].sum() == 0
    assert pa.mask[0, y0 + s:].sum() == 0 and pa.mask[0, :, x0 + s:].sum() == 0


def test_copy_paste_regions_are_disjoint_and_copied():
    rng = np.random.default_rng(3)
    for _ in range(50):
        x = img(int(rng.integers(1000)))
        pa = augment.inject_copy_paste(x, rng, size=8)
        (sy, sx), (dy, dx), s = pa.meta["src"], pa.meta["dst"], pa.meta["size"]
        assert abs(sy - dy) >= s or abs(sx - dx) >= s
        np.testing.assert_array_equal(pa.corrupted[:, dy:dy + s, dx:dx + s], x[:, sy:sy + s, sx:sx + s])


def test_lines_are_dark_or_light():
    rng = np.random.default_rng(4)
    for _ in range(50):
        x = np.full((3, 32, 32), 0.5, np.float32)
        pa = augment.inject_lines(x, rng)
        vals = pa.corrupted[0][pa.mask[0] > 0]
        assert pa.meta["count"] in (1, 2, 3, 4)
        assert np.all((vals <= 0.15) | (vals >= 0.85))


def test_polyline_stays_inside_frame():
    rng = np.random.default_rng(5)
    for _ in range(200):
        pts = augment.polyline(rng, float(rng.uniform(2, 60)), 20, 30)
        assert pts.shape == (4, 2)
        assert pts[:, 0].min() >= 0 and pts[:, 0].max() <= 19
        assert pts[:, 1].min() >= 0 and pts[:, 1].max() <= 29


def test_scaled_sizes():
    cfg = AugmentConfig()
    assert cfg.scaled_block_sizes(1024) == (32, 64, 128)
    assert cfg.scaled_block_sizes(64) == (2, 4, 8)
    assert cfg.scaled_line_length(64) == (pytest.approx(3.125), pytest.approx(9.375))


def test_sample_clean_probability():
    rng = np.random.default_rng(6)
    x = img()
    kinds = [augment.sample(x, rng, AugmentConfig(clean_probability=1.0)).kind for _ in range(20)]
    assert set(kinds) == {"none"}
    kinds = {augment.sample(x, rng, AugmentConfig()).kind for _ in range(200)}
    assert kinds == set(augment.KINDS)


@pytest.mark.parametrize("bad", [dict(coverage=(0.5, 0.2)), dict(line_count=(0, 2)),
                                 dict(line_width=(2, 1)), dict(clean_probability=1.5)])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        AugmentConfig(**bad).validate()
