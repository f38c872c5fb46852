import hashlib
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from eiinpaint.imaging import to_monochrome
from eiinpaint.methods import diffusion_only, get_method
from eiinpaint.metrics import (
    CSV_COLUMNS,
    MaskSpec,
    MetricReport,
    benchmark_decolorize,
    decolorize_inputs,
    psnr,
    ssim,
)

images = arrays(np.float64, st.tuples(st.integers(11, 16), st.integers(11, 16), st.just(3)), elements=st.floats(0, 1))


# PSNR


def test_psnr_identical_is_infinite():
    a = np.random.default_rng(0).random((4, 4, 3))
    assert psnr(a, a) == math.inf


def test_psnr_uniform_difference_closed_form():
    a = np.full((8, 8, 3), 0.3)
    assert abs(psnr(a, a + 0.1) - 20.0) <= 1e-6


def test_psnr_single_pixel_region():
    a = np.zeros((3, 3, 3))
    b = a.copy()
    b[1, 1] = 1.0
    region = np.zeros((3, 3), bool)
    region[1, 1] = True
    assert psnr(a, b, region) == pytest.approx(0.0)


def test_psnr_empty_region_is_rejected():
    with pytest.raises(ValueError, match="empty"):
        psnr(np.zeros((2, 2, 3)), np.ones((2, 2, 3)), np.zeros((2, 2), bool))


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2, 3)), np.zeros((2, 3, 3)))


@settings(max_examples=30)
@given(images, images)
def test_psnr_symmetric_and_positive(a, b):
    if a.shape != b.shape:
        b = np.resize(b, a.shape)
    assert psnr(a, b) == psnr(b, a)
    if not np.array_equal(a, b):
        assert psnr(a, b) > 0


# SSIM


@settings(max_examples=30)
@given(images)
def test_ssim_self_is_exactly_one(a):
    assert ssim(a, a) == 1.0
    assert ssim(a, a, window="box8") == 1.0


def test_ssim_negative_is_below_one():
    a = np.random.default_rng(1).random((16, 16, 3))
    assert ssim(a, 1.0 - a) < 1.0


def test_ssim_constants_closed_form():
    x, y = 0.5, 0.6
    c1, c2 = 0.01**2, 0.03**2
    expected = (2 * x * y + c1) * c2 / ((x * x + y * y + c1) * c2)
    got = ssim(np.full((16, 16), x), np.full((16, 16), y))
    assert got == pytest.approx(expected, abs=1e-9)


def test_ssim_uses_luminance():
    rng = np.random.default_rng(2)
    a = rng.random((16, 16, 3))
    assert ssim(a, a[..., ::-1]) == pytest.approx(ssim(to_monochrome(a), to_monochrome(a[..., ::-1])))


def test_ssim_rejects_small_images_and_bad_window():
    with pytest.raises(ValueError):
        ssim(np.zeros((10, 10)), np.zeros((10, 10)))
    with pytest.raises(ValueError):
        ssim(np.zeros((12, 12)), np.zeros((12, 12)), window="disk")


def test_ssim_window_positions_stay_inside():
    # a change confined to the outer border affects only windows touching it
    a = np.random.default_rng(3).random((30, 30))
    b = a.copy()
    b[0, 0] = 1 - b[0, 0]
    assert ssim(a, b) < 1.0
    c = a.copy()
    c[29, 29] = 1 - c[29, 29]
    assert ssim(a, c) < 1.0


# benchmark


def _truths():
    rng = np.random.default_rng(4)
    return [("a", rng.random((24, 24, 3))), ("b", rng.random((24, 24, 3)))]


def _seen_digest(*arrays):
    h = hashlib.sha256()
    for arr in arrays:
        h.update(np.ascontiguousarray(arr).tobytes())
    return h.hexdigest()


class Recorder:
    """Method that remembers exactly what it was shown."""

    def __init__(self):
        self.seen = []

    def __call__(self, gray, known, mask):
        self.seen.append((gray.copy(), known.copy(), mask.copy()))
        return np.where(mask[..., None], 0.5, known)


def test_taint_methods_never_see_masked_color():
    truth = np.random.default_rng(5).random((24, 24, 3))
    rec = Recorder()
    spec = MaskSpec("rect", 0.25)
    benchmark_decolorize([("t", truth)], spec, {"rec": rec}, seeds=(0, 1, 2))
    assert len(rec.seen) == 3
    for seed, (gray, known, mask) in zip((0, 1, 2), rec.seen):
        assert np.array_equal(mask, spec.make(24, 24, seed))
        assert not known[mask].any()
        assert np.array_equal(known[~mask], truth[~mask])
        assert np.allclose(gray, to_monochrome(truth))


def test_taint_inputs_independent_of_hidden_color():
    # two ground truths that share gray and unmasked color but differ in hidden chroma
    rng = np.random.default_rng(6)
    truth = rng.uniform(0.3, 0.7, (24, 24, 3))
    mask = MaskSpec("rect", 0.25).make(24, 24, 0)
    other = truth.copy()
    # shift chroma while keeping 0.30R + 0.59G + 0.11B fixed
    delta = np.array([0.1, -0.1 * 0.30 / 0.59, 0.0])
    other[mask] += delta
    assert np.allclose(to_monochrome(other), to_monochrome(truth))
    ra, rb = Recorder(), Recorder()
    benchmark_decolorize([("x", truth)], MaskSpec("rect", 0.25), {"m": ra})
    benchmark_decolorize([("x", other)], MaskSpec("rect", 0.25), {"m": rb})
    (gray_a, known_a, mask_a), (gray_b, known_b, mask_b) = ra.seen[0], rb.seen[0]
    assert np.allclose(gray_a, gray_b, atol=1e-12)
    assert _seen_digest(known_a, mask_a) == _seen_digest(known_b, mask_b)


def test_zero_area_mask_row_is_invalid():
    report = benchmark_decolorize(_truths()[:1], MaskSpec("rect", 0.0), {"d": diffusion_only})
    (row,) = report.rows
    assert row.status.startswith("invalid")
    assert report.valid() == []
    assert math.isnan(report.mean("d"))


def test_method_failure_is_recorded_and_run_continues():
    def broken(gray, known, mask):
        raise RuntimeError("boom")

    report = benchmark_decolorize(_truths(), MaskSpec("rect", 0.25), {"broken": broken, "diff": diffusion_only})
    statuses = {(r.image, r.method): r.status for r in report.rows}
    assert statuses[("a", "broken")] == "error: RuntimeError: boom"
    assert statuses[("b", "diff")] == "ok"


def test_seeds_multiply_rows_and_order_is_stable():
    report = benchmark_decolorize(_truths(), MaskSpec("rect", 0.25), {"d": diffusion_only, "l": get_method("levin")}, seeds=(0, 1, 2))
    assert len(report.valid("d")) == 6
    keys = [(r.image, r.seed, r.method) for r in report.rows]
    assert keys == [(i, s, m) for i in "ab" for s in (0, 1, 2) for m in "dl"]


def test_parallel_report_equals_serial():
    methods = {"d": diffusion_only, "l": get_method("levin")}
    serial = benchmark_decolorize(_truths(), MaskSpec("freeform", 0.25), methods, seeds=(0, 1))
    parallel = benchmark_decolorize(_truths(), MaskSpec("freeform", 0.25), methods, seeds=(0, 1), jobs=2)
    assert serial.to_csv() == parallel.to_csv()


def test_csv_and_table_format(tmp_path):
    report = benchmark_decolorize(_truths(), MaskSpec("rect", 0.25), {"d": diffusion_only})
    text = report.to_csv(tmp_path / "r.csv")
    header = text.splitlines()[0].split(",")
    assert header == CSV_COLUMNS
    for col in ("image", "method", "mask_type", "mask_ratio", "psnr_masked", "psnr_full", "ssim"):
        assert col in header
    assert (tmp_path / "r.csv").read_text() == text
    table = report.format_table()
    assert "mean psnr_masked" in table and "d " in table


def test_freeform_mask_spec_hits_ratio():
    for seed in range(3):
        m = MaskSpec("freeform", 0.25, 0.01).make(64, 64, seed)
        assert abs(m.mean() - 0.25) <= 0.01
    with pytest.raises(ValueError):
        MaskSpec("circle").make(8, 8, 0)


def test_decolorize_inputs_zero_masked_color():
    truth = np.random.default_rng(7).random((5, 5, 3))
    mask = np.zeros((5, 5), bool)
    mask[1:3, 1:3] = True
    gray, known, m = decolorize_inputs(truth, mask)
    assert not known[m].any() and np.array_equal(known[~m], truth[~m])
    assert np.allclose(gray, to_monochrome(truth))


def test_report_summary_means():
    report = MetricReport()
    assert report.summary() == {}
