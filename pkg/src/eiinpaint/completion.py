"""Sources for the completed monochrome bottleneck.

Either a gray raster produced by any external inpainting model, or a built-in
learning-free harmonic fill.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import as_gray, as_mask, load_gray


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, residual: float):
        super().__init__(f"diffusion fill did not converge in {iterations} sweeps (max update {residual:.3e})")
        self.iterations = iterations
        self.residual = residual


class MonoMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class MonoCompletion:
    gray: np.ndarray
    provenance: str  # "external-file" or "diffusion-fill"
    source_path: Path | None = None
    iterations: int = 0


def _neighbour_mean(u: np.ndarray) -> np.ndarray:
    """Mean of the 4-neighbours, mirroring at the image border (zero-flux edges)."""
    p = np.pad(u, 1, mode="edge")
    return 0.25 * (p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:])


def diffusion_fill(
    gray,
    mask,
    tol: float = 1e-5,
    max_iters: int | None = None,
    *,
    warm_start: bool = False,
) -> MonoCompletion:
    """Harmonic fill of the missing region with known pixels as Dirichlet data.

    Red-black Gauss-Seidel sweeps of the 4-neighbour Laplacian until the largest
    update falls below ``tol``. Missing pixels start at the mean of the known
    pixels bordering the hole, or at their current values with ``warm_start``.
    Every update is a convex combination of neighbours, so iterates never leave
    the range spanned by the boundary values and the starting guess.
    """
    g = as_gray(gray)
    m = as_mask(mask)
    if g.shape != m.shape:
        raise ValueError(f"mask shape {m.shape} does not match gray shape {g.shape}")
    if m.all():
        raise ValueError("diffusion fill needs at least one known pixel")
    h, w = g.shape
    if max_iters is None:
        max_iters = 10 * (h + w) ** 2
    u = g.astype(np.float64).copy()
    if not m.any():
        return MonoCompletion(u, "diffusion-fill")
    if not warm_start:
        grown = np.zeros_like(m)
        grown[1:] |= m[:-1]
        grown[:-1] |= m[1:]
        grown[:, 1:] |= m[:, :-1]
        grown[:, :-1] |= m[:, 1:]
        boundary = grown & ~m
        u[m] = u[boundary].mean()

    rows, cols = np.indices((h, w))
    red = m & ((rows + cols) % 2 == 0)
    black = m & ((rows + cols) % 2 == 1)
    update = np.inf
    for it in range(1, max_iters + 1):
        update = 0.0
        for colour in (red, black):
            new = _neighbour_mean(u)[colour]
            update = max(update, float(np.abs(new - u[colour]).max(initial=0.0)))
            u[colour] = new
        if update < tol:
            return MonoCompletion(u, "diffusion-fill", iterations=it)
    raise ConvergenceError(max_iters, update)


def load_external_mono(path, original_gray, mask, *, strict: bool = True, atol: float = 2 / 255) -> MonoCompletion:
    """Read an externally completed monochrome and check it against the known pixels.

    With ``strict=False`` the known pixels are overwritten with ``original_gray``
    instead of raising on disagreement.
    """
    path = Path(path)
    g = load_gray(path)
    orig = as_gray(original_gray)
    m = as_mask(mask)
    if g.shape != orig.shape or m.shape != orig.shape:
        raise MonoMismatchError(f"{path}: monochrome is {g.shape[0]}x{g.shape[1]}, expected {orig.shape[0]}x{orig.shape[1]}")
    diff = np.where(m, 0.0, np.abs(g - orig))
    worst = np.unravel_index(int(np.argmax(diff)), diff.shape)
    if diff[worst] > atol + 1e-12:
        if strict:
            raise MonoMismatchError(
                f"{path}: known pixel (row {worst[0]}, col {worst[1]}) differs from the input "
                f"monochrome by {diff[worst]:.4f} (> {atol:.4f})"
            )
    if not strict:
        g = np.where(m, g, orig)
    return MonoCompletion(g, "external-file", path)
