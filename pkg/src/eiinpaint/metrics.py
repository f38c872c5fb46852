"""PSNR/SSIM and the de-colorization benchmark.

The benchmark keeps the full gray image, hides color inside a mask, asks each
colorization method to restore it, and scores the result against the intact
ground truth. Methods never receive ground-truth color under the mask.
"""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from .imaging import as_mask, as_rgb, to_monochrome
from .maskgen import MaskGenConfig, free_form_mask, mask_ratio, random_rectangle_mask, scale_mask_to_ratio

PSNR_IDENTICAL = math.inf


def psnr(a, b, region=None) -> float:
    """PSNR in dB for values in [0, 1]; ``region`` restricts it to mask-1 pixels.

    Identical inputs return ``math.inf``.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    sq = (a - b) ** 2
    if region is not None:
        r = as_mask(region)
        if r.shape != a.shape[:2]:
            raise ValueError(f"region shape {r.shape} does not match image {a.shape[:2]}")
        if not r.any():
            raise ValueError("PSNR region is empty")
        sq = sq[r]
    mse = float(sq.mean())
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    ax = np.arange(size) - (size - 1) / 2
    g = np.exp(-(ax**2) / (2 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a, b, window: str = "gaussian") -> float:
    """Mean local SSIM on the monochrome of both images (L = 1).

    ``window`` is ``"gaussian"`` (11x11, sigma 1.5) or ``"box8"`` (8x8 uniform).
    Only window positions fully inside the image are averaged.
    """
    x = to_monochrome(a) if np.ndim(a) == 3 else np.asarray(a, dtype=np.float64)
    y = to_monochrome(b) if np.ndim(b) == 3 else np.asarray(b, dtype=np.float64)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if window == "gaussian":
        k = _gaussian_window()
    elif window == "box8":
        k = np.full((8, 8), 1 / 64)
    else:
        raise ValueError(f"unknown SSIM window {window!r}")
    kh, kw = k.shape
    if x.shape[0] < kh or x.shape[1] < kw:
        raise ValueError(f"image {x.shape} is smaller than the {kh}x{kw} SSIM window")

    def filt(img):
        full = ndimage.correlate(img, k, mode="constant")
        # keep positions whose window lies entirely inside the image
        top, left = kh // 2, kw // 2
        return full[top : top + x.shape[0] - kh + 1, left : left + x.shape[1] - kw + 1]

    c1, c2 = 0.01**2, 0.03**2
    mu_x, mu_y = filt(x), filt(y)
    var_x = filt(x * x) - mu_x * mu_x
    var_y = filt(y * y) - mu_y * mu_y
    cov = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return float(np.mean(num / den))


# --- benchmark ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MaskSpec:
    kind: str = "rect"  # "rect" or "freeform"
    ratio: float = 0.25
    tol: float = 0.01

    def make(self, h: int, w: int, seed: int) -> np.ndarray:
        if self.ratio <= 0:
            return np.zeros((h, w), dtype=bool)
        if self.kind == "rect":
            return random_rectangle_mask(h, w, self.ratio, seed)
        if self.kind == "freeform":
            base = free_form_mask(h, w, MaskGenConfig(seed=seed))
            if not base.any():
                base = free_form_mask(h, w, MaskGenConfig(min_strokes=1, seed=seed + 1))
            return scale_mask_to_ratio(base, self.ratio, self.tol, seed=seed)
        raise ValueError(f"unknown mask kind {self.kind!r}; expected 'rect' or 'freeform'")


@dataclass
class BenchmarkRow:
    image: str
    method: str
    mask_type: str
    seed: int
    mask_ratio: float
    psnr_masked: float = math.nan
    psnr_full: float = math.nan
    ssim: float = math.nan
    seconds: float = 0.0
    status: str = "ok"


# wall-clock time is kept off the CSV so reruns produce identical files
CSV_COLUMNS = ["image", "method", "mask_type", "seed", "mask_ratio", "psnr_masked", "psnr_full", "ssim", "status"]


@dataclass
class MetricReport:
    rows: list[BenchmarkRow] = field(default_factory=list)

    def valid(self, method: str | None = None) -> list[BenchmarkRow]:
        return [r for r in self.rows if r.status == "ok" and (method is None or r.method == method)]

    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r.method not in seen:
                seen.append(r.method)
        return seen

    def mean(self, method: str, column: str = "psnr_masked") -> float:
        vals = [getattr(r, column) for r in self.valid(method)]
        return float(np.mean(vals)) if vals else math.nan

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            m: {
                "psnr_masked": self.mean(m, "psnr_masked"),
                "psnr_full": self.mean(m, "psnr_full"),
                "ssim": self.mean(m, "ssim"),
                "rows": len(self.valid(m)),
            }
            for m in self.methods()
        }

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for r in self.rows:
            d = asdict(r)
            for k in ("mask_ratio", "psnr_masked", "psnr_full", "ssim"):
                d[k] = f"{d[k]:.6f}"
            writer.writerow(d)
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def format_table(self) -> str:
        lines = [f"{'image':<24} {'method':<16} {'mask':<9} {'seed':>4} {'ratio':>6} {'psnr_m':>8} {'psnr_f':>8} {'ssim':>6}  status"]
        for r in self.rows:
            lines.append(
                f"{r.image:<24} {r.method:<16} {r.mask_type:<9} {r.seed:>4} {r.mask_ratio:>6.3f} "
                f"{r.psnr_masked:>8.2f} {r.psnr_full:>8.2f} {r.ssim:>6.3f}  {r.status}"
            )
        lines.append("")
        lines.append(f"{'method':<16} {'mean psnr_masked':>17} {'mean psnr_full':>15} {'mean ssim':>10} {'rows':>5}")
        for m, s in self.summary().items():
            lines.append(f"{m:<16} {s['psnr_masked']:>17.3f} {s['psnr_full']:>15.3f} {s['ssim']:>10.4f} {s['rows']:>5d}")
        return "\n".join(lines)


def decolorize_inputs(truth, mask):
    """What a method may see: full gray, color with the masked region zeroed, the mask."""
    rgb = as_rgb(truth)
    m = as_mask(mask)
    gray = to_monochrome(rgb)
    known = np.where(m[..., None], 0.0, rgb)
    return gray, known, m


def _run_one(job):
    name, truth, mask_type, seed, mask, method_name, method = job
    ratio = mask_ratio(mask)
    row = BenchmarkRow(name, method_name, mask_type, seed, ratio)
    if not mask.any():
        row.status = "invalid: empty mask"
        return row
    gray, known, m = decolorize_inputs(truth, mask)
    start = time.perf_counter()
    try:
        out = method(gray, known, m)
    except Exception as exc:  # recorded per row; the run continues
        row.status = f"error: {type(exc).__name__}: {exc}"
        row.seconds = time.perf_counter() - start
        return row
    row.seconds = time.perf_counter() - start
    out = np.asarray(out, dtype=np.float64)
    row.psnr_masked = psnr(out, truth, m)
    row.psnr_full = psnr(out, truth)
    row.ssim = ssim(out, truth)
    return row


def benchmark_decolorize(
    images: Sequence[tuple[str, np.ndarray]],
    mask_spec: MaskSpec,
    methods: dict[str, Callable],
    seeds: Sequence[int] = (0,),
    jobs: int = 1,
) -> MetricReport:
    """Run every method on every (image, mask seed) pair.

    ``methods`` maps a name to ``f(gray, known_color, mask) -> RGB``. Rows are
    ordered image, seed, method regardless of ``jobs``.
    """
    if not images:
        raise ValueError("benchmark needs at least one image")
    if not methods:
        raise ValueError("benchmark needs at least one method")
    work = []
    for name, img in images:
        truth = as_rgb(img)
        h, w = truth.shape[:2]
        for seed in seeds:
            mask = mask_spec.make(h, w, seed)
            for method_name, method in methods.items():
                work.append((name, truth, mask_spec.kind, seed, mask, method_name, method))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_run_one, work))
    else:
        rows = [_run_one(job) for job in work]
    return MetricReport(rows)
