import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from eiinpaint.imaging import (
    ImageIOError,
    as_mask,
    bilinear_upsample,
    box_downsample,
    build_pyramids,
    gray_to_rgb,
    level_shapes,
    load_gray,
    load_image,
    load_mask,
    max_pyramid_height,
    maxpool_mask_downsample,
    reattach_luminance,
    save_gray,
    save_image,
    save_mask,
    to_monochrome,
)

unit = st.floats(0.0, 1.0, allow_nan=False)


def rgb_arrays(max_side=12):
    shape = st.tuples(st.integers(1, max_side), st.integers(1, max_side), st.just(3))
    return arrays(np.float64, shape, elements=unit)


def gray_arrays(min_side=1, max_side=12):
    shape = st.tuples(st.integers(min_side, max_side), st.integers(min_side, max_side))
    return arrays(np.float64, shape, elements=unit)


# monochrome


@pytest.mark.parametrize(
    "rgb, expected",
    [((1, 1, 1), 1.0), ((1, 0, 0), 0.30), ((0, 1, 0), 0.59), ((0, 0, 1), 0.11), ((0.2, 0.4, 0.6), 0.362)],
)
def test_monochrome_weights(rgb, expected):
    assert to_monochrome(np.array([[rgb]], float))[0, 0] == pytest.approx(expected, abs=1e-12)


@given(gray_arrays())
def test_monochrome_of_replicated_gray_is_identity(g):
    assert np.allclose(to_monochrome(gray_to_rgb(g)), g, atol=1e-9)


@given(rgb_arrays())
def test_monochrome_stays_in_unit_range(img):
    out = to_monochrome(img)
    assert out.shape == img.shape[:2]
    assert out.min() >= 0.0 and out.max() <= 1.0


# box downsample


def test_box_downsample_by_hand():
    block = np.array([[0.0, 0.5], [0.5, 1.0]])
    assert box_downsample(block, 2).tolist() == [[0.5]]


def test_box_downsample_ragged_edge_uses_in_bounds_pixels():
    img = np.arange(9, dtype=float).reshape(3, 3) / 8
    out = box_downsample(img, 2)
    assert out.shape == (2, 2)
    assert out[0, 0] == pytest.approx(img[:2, :2].mean())
    assert out[0, 1] == pytest.approx(img[:2, 2].mean())
    assert out[1, 1] == pytest.approx(img[2, 2])


@given(gray_arrays(), st.integers(1, 4))
def test_box_downsample_matches_blockwise_mean(img, factor):
    out = box_downsample(img, factor)
    h, w = img.shape
    assert out.shape == (-(-h // factor), -(-w // factor))
    for r, c in itertools.product(range(out.shape[0]), range(out.shape[1])):
        block = img[r * factor : (r + 1) * factor, c * factor : (c + 1) * factor]
        assert out[r, c] == pytest.approx(block.mean(), abs=1e-12)


def test_box_downsample_identity_and_constant():
    rng = np.random.default_rng(3)
    img = rng.random((7, 5, 3))
    assert np.array_equal(box_downsample(img, 1), img)
    assert np.allclose(box_downsample(np.full((9, 6, 3), 0.4), 3), 0.4)


def test_box_downsample_rejects_bad_factor():
    with pytest.raises(ValueError):
        box_downsample(np.zeros((4, 4)), 0)


# bilinear upsample


def test_bilinear_by_hand():
    assert np.allclose(bilinear_upsample(np.array([[0.0, 1.0]]), 1, 3), [[0.0, 0.5, 1.0]])


def test_bilinear_identity_and_constant():
    rng = np.random.default_rng(4)
    img = rng.random((6, 5, 3))
    assert np.allclose(bilinear_upsample(img, 6, 5), img)
    assert np.allclose(bilinear_upsample(np.full((3, 4), 0.7), 9, 11), 0.7)


def test_bilinear_corners_are_preserved():
    rng = np.random.default_rng(5)
    img = rng.random((4, 6))
    up = bilinear_upsample(img, 13, 17)
    for r, c in [(0, 0), (0, -1), (-1, 0), (-1, -1)]:
        assert up[r, c] == pytest.approx(img[r, c])


def test_bilinear_rejects_shrinking():
    with pytest.raises(ValueError):
        bilinear_upsample(np.zeros((4, 4)), 3, 4)


@given(gray_arrays(max_side=8), st.integers(0, 9), st.integers(0, 9))
def test_bilinear_stays_within_source_range(img, dh, dw):
    h, w = img.shape
    up = bilinear_upsample(img, h + dh, w + dw)
    assert up.min() >= img.min() - 1e-12
    assert up.max() <= img.max() + 1e-12


# mask pyramid


def test_maxpool_examples():
    assert maxpool_mask_downsample(np.array([[1, 0], [0, 0]], bool), 2).tolist() == [[True]]
    assert not maxpool_mask_downsample(np.zeros((6, 6), bool), 2).any()
    checker = (np.indices((8, 8)).sum(0) % 2).astype(bool)
    assert maxpool_mask_downsample(checker, 2).all()


def test_maxpool_equals_or_aggregation_exhaustively():
    for bits in range(1 << 16):
        m = np.array([(bits >> k) & 1 for k in range(16)], bool).reshape(4, 4)
        out = maxpool_mask_downsample(m, 2)
        expected = m.reshape(2, 2, 2, 2).any(axis=(1, 3))
        assert np.array_equal(out, expected)


def test_maxpool_rejects_bad_factor():
    with pytest.raises(ValueError):
        maxpool_mask_downsample(np.zeros((4, 4), bool), 0)


def test_as_mask_rejects_non_binary():
    with pytest.raises(ValueError):
        as_mask(np.array([[0.0, 0.5]]))


# pyramids


def test_pyramid_level_sizes():
    img = np.zeros((256, 256, 3))
    pyr = build_pyramids(img, np.zeros((256, 256), bool), 3)
    assert [lv.shape for lv in pyr.levels] == [(64, 64), (128, 128), (256, 256)]
    assert level_shapes(100, 37, 3) == [(25, 10), (50, 19), (100, 37)]


def test_pyramid_height_one_is_identity():
    rng = np.random.default_rng(6)
    img = rng.random((20, 24, 3))
    mask = rng.random((20, 24)) < 0.3
    (level,) = build_pyramids(img, mask, 1).levels
    assert np.array_equal(level.color, img)
    assert np.array_equal(level.mask, mask)
    assert np.allclose(level.gray, to_monochrome(img))


def test_pyramid_too_tall_names_usable_height():
    with pytest.raises(ValueError, match="maximum usable height for 64x64 is 4"):
        build_pyramids(np.zeros((64, 64, 3)), np.zeros((64, 64), bool), 5)
    assert max_pyramid_height(64, 64) == 4


@settings(max_examples=40, deadline=None)
@given(st.integers(16, 40), st.integers(16, 40), st.floats(0.0, 0.6), st.integers(0, 2**32 - 1))
def test_pyramid_mask_ratio_grows_toward_coarse(h, w, p, seed):
    rng = np.random.default_rng(seed)
    mask = rng.random((h, w)) < p
    pyr = build_pyramids(rng.random((h, w, 3)), mask, 2)
    ratios = [lv.mask.mean() for lv in pyr.levels]
    assert ratios[0] >= ratios[1]
    for lv in pyr.levels:
        assert lv.gray.shape == lv.color.shape[:2] == lv.mask.shape
        assert lv.mask.dtype == bool
    # level n is ceil of level n+1
    assert pyr.levels[0].shape == (-(-h // 2), -(-w // 2))


def test_pyramid_uses_supplied_gray():
    gray = np.full((16, 16), 0.25)
    pyr = build_pyramids(np.ones((16, 16, 3)), np.zeros((16, 16), bool), 1, gray=gray)
    assert np.array_equal(pyr.levels[0].gray, gray)


# luminance reattachment


def test_reattach_unchanged_when_already_consistent():
    rng = np.random.default_rng(7)
    img = rng.uniform(0.2, 0.8, (5, 5, 3))
    assert np.allclose(reattach_luminance(img, to_monochrome(img)), img)


def test_reattach_shift_by_constant():
    rng = np.random.default_rng(8)
    img = rng.uniform(0.2, 0.7, (5, 5, 3))
    out = reattach_luminance(img, to_monochrome(img) + 0.1)
    assert np.allclose(out, img + 0.1)


def test_reattach_saturated_pixel():
    out = reattach_luminance(np.ones((1, 1, 3)), np.full((1, 1), 0.4))
    assert to_monochrome(out)[0, 0] == pytest.approx(0.4, abs=1e-9)
    assert (out < 1).all()


@given(rgb_arrays(6), gray_arrays(6, 6))
def test_reattach_matches_target_luminance(img, _):
    g = np.clip(to_monochrome(img)[::-1, ::-1] * 0.9 + 0.05, 0, 1)
    out = reattach_luminance(img, g)
    assert out.min() >= 0 and out.max() <= 1
    assert np.abs(to_monochrome(out) - g).max() <= 1e-6


def test_reattach_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        reattach_luminance(np.zeros((3, 3, 3)), np.zeros((3, 4)))


# file I/O


def test_image_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    img = rng.random((9, 7, 3))
    save_image(img, tmp_path / "a.png")
    back = load_image(tmp_path / "a.png")
    assert back.shape == img.shape
    assert np.abs(back - img).max() <= 0.5 / 255 + 1e-12


def test_white_pixel_loads_as_one(tmp_path):
    Image.new("RGB", (1, 1), (255, 255, 255)).save(tmp_path / "w.png")
    assert load_image(tmp_path / "w.png").tolist() == [[[1.0, 1.0, 1.0]]]


def test_gray_and_mask_round_trip(tmp_path):
    rng = np.random.default_rng(10)
    g = rng.random((6, 8))
    m = rng.random((6, 8)) < 0.5
    save_gray(g, tmp_path / "g.png")
    save_mask(m, tmp_path / "m.png")
    assert np.abs(load_gray(tmp_path / "g.png") - g).max() <= 0.5 / 255 + 1e-12
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)
    assert np.asarray(Image.open(tmp_path / "m.png")).max() == 255


def test_mask_threshold_at_128(tmp_path):
    Image.fromarray(np.array([[0, 127, 128, 255]], np.uint8), mode="L").save(tmp_path / "m.png")
    assert load_mask(tmp_path / "m.png").tolist() == [[False, False, True, True]]


def test_missing_file_names_path(tmp_path):
    path = tmp_path / "nope.png"
    with pytest.raises(ImageIOError, match="nope.png"):
        load_image(path)


def test_garbage_file_is_io_error(tmp_path):
    path = tmp_path / "bad.png"
    path.write_bytes(b"not an image")
    with pytest.raises(ImageIOError, match="bad.png"):
        load_image(path)
