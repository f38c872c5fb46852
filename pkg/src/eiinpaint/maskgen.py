"""Free-form brush-stroke and rectangular masks.

Free-form strokes are random walks: a start point, then up to
``max_vertices_per_stroke - 1`` segments, each turning by at most
``max_turn_angle`` from the previous heading. Every segment is rasterized as a
thick line with round caps. All draws come from
``derive_rng(cfg.seed, "maskgen", h, w)`` (PCG64), so a seed reproduces the
mask bit for bit on any machine.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import as_mask
from .seeding import derive_rng


class MaskRatioError(RuntimeError):
    def __init__(self, target: float, achieved: float, reason: str):
        super().__init__(f"cannot reach mask ratio {target:.4f} ({reason}); achieved {achieved:.4f}")
        self.target = target
        self.achieved = achieved


@dataclass(frozen=True)
class MaskGenConfig:
    """Stroke statistics; lengths are in pixels at a 256 x 256 reference size
    and scale with ``min(h, w) / 256``."""

    min_strokes: int = 1
    max_strokes: int = 8
    min_width: float = 8.0
    max_width: float = 40.0
    max_vertices_per_stroke: int = 12
    max_turn_angle: float = math.pi / 2
    max_segment_length: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.min_strokes <= self.max_strokes):
            raise ValueError("need 0 <= min_strokes <= max_strokes")
        if not (1 <= self.min_width <= self.max_width):
            raise ValueError("need 1 <= min_width <= max_width")
        if self.max_vertices_per_stroke < 2:
            raise ValueError("a stroke needs at least 2 vertices")
        if self.max_segment_length <= 0 or self.max_turn_angle < 0:
            raise ValueError("segment length must be positive and turn angle non-negative")


@dataclass(frozen=True)
class BrushStroke:
    vertices: tuple[tuple[float, float], ...]
    width: float


def sample_strokes(h: int, w: int, cfg: MaskGenConfig) -> list[BrushStroke]:
    rng = derive_rng(cfg.seed, "maskgen", h, w)
    scale = min(h, w) / 256.0
    strokes = []
    n_strokes = int(rng.integers(cfg.min_strokes, cfg.max_strokes + 1))
    for _ in range(n_strokes):
        n_vertices = int(rng.integers(2, cfg.max_vertices_per_stroke + 1))
        width = float(rng.uniform(cfg.min_width, cfg.max_width)) * scale
        r, c = float(rng.uniform(0, h - 1)), float(rng.uniform(0, w - 1))
        heading = float(rng.uniform(0, 2 * math.pi))
        verts = [(r, c)]
        for _ in range(n_vertices - 1):
            heading += float(rng.uniform(-cfg.max_turn_angle, cfg.max_turn_angle))
            length = float(rng.uniform(0.2, 1.0)) * cfg.max_segment_length * scale
            r = min(max(r + length * math.sin(heading), 0.0), h - 1.0)
            c = min(max(c + length * math.cos(heading), 0.0), w - 1.0)
            verts.append((r, c))
        strokes.append(BrushStroke(tuple(verts), max(width, 1.0)))
    return strokes


def rasterize_stroke(mask: np.ndarray, stroke: BrushStroke) -> None:
    """OR a thick polyline with disk caps into ``mask`` in place."""
    h, w = mask.shape
    radius = stroke.width / 2.0
    for (r0, c0), (r1, c1) in zip(stroke.vertices[:-1], stroke.vertices[1:]):
        top = max(int(math.floor(min(r0, r1) - radius)), 0)
        bot = min(int(math.ceil(max(r0, r1) + radius)) + 1, h)
        left = max(int(math.floor(min(c0, c1) - radius)), 0)
        right = min(int(math.ceil(max(c0, c1) + radius)) + 1, w)
        rr, cc = np.mgrid[top:bot, left:right]
        dr, dc = r1 - r0, c1 - c0
        seg2 = dr * dr + dc * dc
        if seg2 == 0:
            t = np.zeros(rr.shape)
        else:
            t = np.clip(((rr - r0) * dr + (cc - c0) * dc) / seg2, 0.0, 1.0)
        dist2 = (rr - (r0 + t * dr)) ** 2 + (cc - (c0 + t * dc)) ** 2
        mask[top:bot, left:right] |= dist2 <= radius * radius


def free_form_mask(h: int, w: int, cfg: MaskGenConfig = MaskGenConfig()) -> np.ndarray:
    if h < 16 or w < 16:
        raise ValueError(f"free-form masks need at least 16x16 pixels, got {h}x{w}")
    mask = np.zeros((h, w), dtype=bool)
    for stroke in sample_strokes(h, w, cfg):
        rasterize_stroke(mask, stroke)
    return mask


def rectangle_mask(h: int, w: int, top: int, left: int, rect_h: int, rect_w: int) -> np.ndarray:
    if min(top, left, rect_h, rect_w) < 0 or top + rect_h > h or left + rect_w > w:
        raise ValueError(f"rectangle ({top}, {left}, {rect_h}x{rect_w}) does not fit in {h}x{w}")
    mask = np.zeros((h, w), dtype=bool)
    mask[top : top + rect_h, left : left + rect_w] = True
    return mask


def random_rectangle_mask(h: int, w: int, ratio: float, seed: int) -> np.ndarray:
    """Square-ish rectangle covering ``ratio`` of the image at a seeded position."""
    rect_h = min(h, max(1, round(h * math.sqrt(ratio))))
    rect_w = min(w, max(1, round(ratio * h * w / rect_h)))
    rng = derive_rng(seed, "rectangle", h, w)
    top = int(rng.integers(0, h - rect_h + 1))
    left = int(rng.integers(0, w - rect_w + 1))
    return rectangle_mask(h, w, top, left, rect_h, rect_w)


def mask_ratio(mask) -> float:
    m = as_mask(mask)
    return float(m.sum()) / m.size


_CROSS = ndimage.generate_binary_structure(2, 1)


def _partial_step(current: np.ndarray, ring: np.ndarray, needed: int, rng, add: bool) -> np.ndarray:
    """Flip only ``needed`` pixels of the one-step ring so the target is hit exactly."""
    idx = np.flatnonzero(ring)
    chosen = rng.choice(idx, size=needed, replace=False)
    out = current.copy().reshape(-1)
    out[chosen] = add
    return out.reshape(current.shape)


def scale_mask_to_ratio(mask, target: float, tol: float = 0.005, max_steps: int = 10_000, seed: int = 0) -> np.ndarray:
    """Grow (dilate) or shrink (erode) the missing region until its ratio is within ``tol`` of ``target``.

    Growth and shrinkage proceed by 4-neighbour morphological steps, so strokes
    stay connected; the final step flips only part of the boundary ring.
    """
    if not 0 < target < 1:
        raise ValueError(f"target ratio must lie in (0, 1), got {target}")
    m = as_mask(mask).copy()
    total = m.size
    goal = int(round(target * total))
    rng = derive_rng(seed, "scale-mask")
    for _ in range(max_steps):
        ratio = m.sum() / total
        if abs(ratio - target) <= tol:
            return m
        count = int(m.sum())
        if count < goal:
            if count == 0:
                raise MaskRatioError(target, 0.0, "mask is empty, nothing to dilate")
            grown = ndimage.binary_dilation(m, _CROSS)
            ring = grown & ~m
            if not ring.any():
                break
            if grown.sum() > goal:
                return _partial_step(m, ring, goal - count, rng, True)
            m = grown
        else:
            shrunk = ndimage.binary_erosion(m, _CROSS, border_value=0)
            ring = m & ~shrunk
            if not ring.any():
                break
            if shrunk.sum() < goal:
                return _partial_step(m, ring, count - goal, rng, False)
            m = shrunk
    raise MaskRatioError(target, mask_ratio(m), "step limit reached")
