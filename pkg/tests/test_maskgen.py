import math
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import ndimage

from eiinpaint.maskgen import (
    MaskGenConfig,
    MaskRatioError,
    free_form_mask,
    mask_ratio,
    random_rectangle_mask,
    rasterize_stroke,
    BrushStroke,
    rectangle_mask,
    sample_strokes,
    scale_mask_to_ratio,
)
from eiinpaint.seeding import derive_rng


def test_zero_strokes_gives_empty_mask():
    cfg = MaskGenConfig(min_strokes=0, max_strokes=0, seed=5)
    assert not free_form_mask(64, 64, cfg).any()


@settings(max_examples=25, deadline=None)
@given(st.integers(16, 80), st.integers(16, 80), st.integers(0, 2**63 - 1))
def test_free_form_is_deterministic_and_binary(h, w, seed):
    cfg = MaskGenConfig(seed=seed)
    a = free_form_mask(h, w, cfg)
    b = free_form_mask(h, w, cfg)
    assert a.dtype == bool and a.shape == (h, w)
    assert a.tobytes() == b.tobytes()


def test_different_seeds_differ():
    masks = {free_form_mask(64, 64, MaskGenConfig(seed=s)).tobytes() for s in range(10)}
    assert len(masks) > 5


def test_too_small_image_is_rejected():
    with pytest.raises(ValueError, match="16x16"):
        free_form_mask(15, 64)


def test_config_validation():
    with pytest.raises(ValueError):
        MaskGenConfig(min_strokes=3, max_strokes=2)
    with pytest.raises(ValueError):
        MaskGenConfig(min_width=0.5)
    with pytest.raises(ValueError):
        MaskGenConfig(min_width=10, max_width=5)


def test_strokes_stay_inside_image():
    for seed in range(20):
        for stroke in sample_strokes(48, 80, MaskGenConfig(seed=seed)):
            assert len(stroke.vertices) >= 2
            for r, c in stroke.vertices:
                assert 0 <= r <= 47 and 0 <= c <= 79


def test_default_calibration_band():
    ratios = [mask_ratio(free_form_mask(256, 256, MaskGenConfig(seed=s))) for s in range(100)]
    mean = float(np.mean(ratios))
    assert 0.10 <= mean <= 0.60, mean


def test_rasterized_stroke_is_a_capsule():
    mask = np.zeros((40, 40), bool)
    rasterize_stroke(mask, BrushStroke(((20.0, 10.0), (20.0, 30.0)), 8.0))
    rr, cc = np.mgrid[:40, :40]
    t = np.clip((cc - 10) / 20, 0, 1)
    expected = (rr - 20) ** 2 + (cc - (10 + 20 * t)) ** 2 <= 16
    assert np.array_equal(mask, expected)


# rectangles and ratios


def test_rectangle_examples():
    assert mask_ratio(rectangle_mask(20, 30, 0, 0, 20, 30)) == 1.0
    assert mask_ratio(rectangle_mask(128, 128, 10, 20, 64, 64)) == 0.25
    assert not rectangle_mask(10, 10, 3, 3, 0, 4).any()
    with pytest.raises(ValueError):
        rectangle_mask(10, 10, 5, 5, 6, 2)


def test_mask_ratio_examples():
    assert mask_ratio(np.zeros((3, 4), bool)) == 0.0
    assert mask_ratio(np.ones((3, 4), bool)) == 1.0
    m = np.zeros(12, bool)
    m[[1, 5, 7]] = True
    assert mask_ratio(m.reshape(3, 4)) == 0.25


@pytest.mark.parametrize("seed", range(5))
def test_random_rectangle_quarter(seed):
    m = random_rectangle_mask(128, 128, 0.25, seed)
    assert mask_ratio(m) == 0.25
    rows, cols = np.nonzero(m)
    assert (rows.max() - rows.min() + 1) * (cols.max() - cols.min() + 1) == m.sum()


# scaling to a ratio


def test_scale_leaves_mask_within_tol_unchanged():
    m = rectangle_mask(64, 64, 0, 0, 32, 32)
    out = scale_mask_to_ratio(m, 0.25, 0.01)
    assert np.array_equal(out, m)


def test_scale_single_pixel_to_quarter():
    m = np.zeros((64, 64), bool)
    m[30, 30] = True
    tol = 0.005
    out = scale_mask_to_ratio(m, 0.25, tol)
    assert abs(mask_ratio(out) - 0.25) <= tol
    assert out[30, 30]


def test_scale_empty_mask_fails_with_ratio():
    with pytest.raises(MaskRatioError) as info:
        scale_mask_to_ratio(np.zeros((32, 32), bool), 0.5)
    assert info.value.achieved == 0.0


def test_scale_rejects_bad_target():
    with pytest.raises(ValueError):
        scale_mask_to_ratio(np.ones((8, 8), bool), 1.0)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([0.225, 0.489, 0.734, 0.1]))
def test_scale_hits_ablation_ratios(seed, target):
    base = free_form_mask(64, 64, MaskGenConfig(min_strokes=1, seed=seed))
    out = scale_mask_to_ratio(base, target, 0.01, seed=seed)
    assert abs(mask_ratio(out) - target) <= 0.01
    assert out.shape == base.shape and out.dtype == bool
    # growing only adds pixels, shrinking only removes them
    if mask_ratio(base) < target:
        assert (out | base).sum() == out.sum()
    else:
        assert (out & base).sum() == out.sum()


def test_morphological_steps_are_monotone():
    rng = np.random.default_rng(0)
    m = rng.random((40, 40)) < 0.2
    cross = ndimage.generate_binary_structure(2, 1)
    grown = ndimage.binary_dilation(m, cross)
    shrunk = ndimage.binary_erosion(m, cross, border_value=0)
    assert mask_ratio(grown) >= mask_ratio(m) >= mask_ratio(shrunk)


def test_scale_is_deterministic():
    base = free_form_mask(64, 64, MaskGenConfig(seed=3))
    a = scale_mask_to_ratio(base, 0.489, seed=3)
    b = scale_mask_to_ratio(base, 0.489, seed=3)
    assert a.tobytes() == b.tobytes()


# seeding


def test_derived_streams_are_reproducible_and_distinct():
    a = derive_rng(7, "level", 1).random(4)
    b = derive_rng(7, "level", 1).random(4)
    c = derive_rng(7, "level", 2).random(4)
    d = derive_rng(8, "level", 1).random(4)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_pcg64_stream_is_pinned():
    # guards against silent changes to the documented seeding scheme
    first = derive_rng(0, "maskgen", 256, 256).integers(0, 2**32)
    again = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=0, spawn_key=(zlib.crc32(b"maskgen"), 256, 256)))
    ).integers(0, 2**32)
    assert first == again
    assert math.isfinite(float(first))
