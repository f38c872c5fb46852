"""Optimization-based guided colorization (Levin-style affinity propagation).

Each pixel's color should equal the affinity-weighted average of its window
neighbours, where affinities come from gray-level similarity only. Known
pixels are hard constraints and the remaining unknowns are found by least
squares, solved with conjugate gradient on the normal equations.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import sparse

from .imaging import as_gray, as_mask, as_rgb


class CGBreakdownError(ArithmeticError):
    def __init__(self, iteration: int, curvature: float):
        super().__init__(f"conjugate gradient broke down at iteration {iteration} (curvature {curvature:.3e})")
        self.iteration = iteration


class LevinSolveError(RuntimeError):
    def __init__(self, channel: int, cause: Exception):
        super().__init__(f"channel {channel}: {cause}")
        self.channel = channel


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual_norm: float
    converged: bool


def cg_solve(
    apply_A: Callable[[np.ndarray], np.ndarray] | sparse.spmatrix | np.ndarray,
    b: np.ndarray,
    tol: float = 1e-8,
    max_iters: int | None = None,
    *,
    x0: np.ndarray | None = None,
    precond: np.ndarray | None = None,
) -> CGResult:
    """Conjugate gradient for a symmetric positive (semi-)definite operator.

    Stops when ``||b - A x|| <= tol * ||b||``. ``precond`` is an optional
    elementwise inverse-diagonal (Jacobi) preconditioner.
    """
    op = apply_A if callable(apply_A) else (lambda v, M=apply_A: M @ v)
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    if max_iters is None:
        max_iters = max(10 * n, 100)
    x = np.zeros(n) if x0 is None else np.asarray(x0, dtype=np.float64).copy()
    b_norm = float(np.linalg.norm(b))
    target = tol * b_norm
    r = b - op(x) if x0 is not None else b.copy()
    r_norm = float(np.linalg.norm(r))
    if b_norm == 0.0 and x0 is None:
        return CGResult(x, 0, 0.0, True)
    if r_norm <= target:
        return CGResult(x, 0, r_norm, True)
    z = r * precond if precond is not None else r
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iters + 1):
        ap = op(p)
        curvature = float(p @ ap)
        if curvature <= 1e-300 or not np.isfinite(curvature):
            raise CGBreakdownError(it, curvature)
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * ap
        r_norm = float(np.linalg.norm(r))
        if r_norm <= target:
            return CGResult(x, it, r_norm, True)
        z = r * precond if precond is not None else r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CGResult(x, max_iters, r_norm, False)


@dataclass
class AffinitySystem:
    """Row-stochastic neighbour weights; ``weights[r, s]`` is ``w_rs``."""

    weights: sparse.csr_matrix
    sigma: np.ndarray
    window_radius: int


def _window_offsets(radius: int):
    return [(dr, dc) for dr in range(-radius, radius + 1) for dc in range(-radius, radius + 1) if (dr, dc) != (0, 0)]


def _local_std(y: np.ndarray, radius: int) -> np.ndarray:
    """Standard deviation over each (clipped) window, centre included."""
    h, w = y.shape
    total = np.zeros_like(y)
    total_sq = np.zeros_like(y)
    count = np.zeros_like(y)
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            r0, r1 = max(0, -dr), min(h, h - dr)
            c0, c1 = max(0, -dc), min(w, w - dc)
            nb = y[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
            total[r0:r1, c0:c1] += nb
            total_sq[r0:r1, c0:c1] += nb * nb
            count[r0:r1, c0:c1] += 1
    mean = total / count
    return np.sqrt(np.maximum(total_sq / count - mean * mean, 0.0))


def build_affinity(gray, window_radius: int = 1, sigma_floor: float = 0.01) -> AffinitySystem:
    """``w_rs ∝ exp(-(Y(r) - Y(s))^2 / (2 sigma_r^2))`` over the window around ``r``, rows summing to 1."""
    y = as_gray(gray)
    h, w = y.shape
    sigma = np.maximum(_local_std(y, window_radius), sigma_floor)
    idx = np.arange(h * w).reshape(h, w)
    rows, cols, vals = [], [], []
    for dr, dc in _window_offsets(window_radius):
        r0, r1 = max(0, -dr), min(h, h - dr)
        c0, c1 = max(0, -dc), min(w, w - dc)
        if r0 >= r1 or c0 >= c1:
            continue
        centre = y[r0:r1, c0:c1]
        nb = y[r0 + dr : r1 + dr, c0 + dc : c1 + dc]
        s = sigma[r0:r1, c0:c1]
        rows.append(idx[r0:r1, c0:c1].ravel())
        cols.append(idx[r0 + dr : r1 + dr, c0 + dc : c1 + dc].ravel())
        vals.append(np.exp(-((centre - nb) ** 2) / (2 * s * s)).ravel())
    n = h * w
    if rows:
        mat = sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
        sums = np.asarray(mat.sum(axis=1)).ravel()
        mat = sparse.diags(np.divide(1.0, sums, out=np.zeros(n), where=sums > 0)) @ mat
    else:
        mat = sparse.csr_matrix((n, n))
    return AffinitySystem(mat.tocsr(), sigma, window_radius)


def levin_system(gray, mask, window_radius: int = 1, sigma_floor: float = 0.01):
    """Normal-equation pieces: ``(A_uu, B)`` with ``A_uu x_u = -B x_k`` per channel."""
    m = as_mask(mask).ravel()
    aff = build_affinity(gray, window_radius, sigma_floor)
    n = m.size
    lap = (sparse.identity(n, format="csr") - aff.weights).tocsc()
    unknown = np.flatnonzero(m)
    known = np.flatnonzero(~m)
    l_u = lap[:, unknown]
    l_k = lap[:, known]
    a_uu = (l_u.T @ l_u).tocsr()
    coupling = (l_u.T @ l_k).tocsr()
    return a_uu, coupling, unknown, known


def levin_colorize(
    gray,
    known_color,
    mask,
    *,
    window_radius: int = 1,
    sigma_floor: float = 0.01,
    tol: float = 1e-8,
    max_iters: int | None = None,
) -> np.ndarray:
    """Propagate known colors into the masked region along gray-level affinities."""
    g = as_gray(gray)
    c = as_rgb(known_color)
    m = as_mask(mask)
    if not (g.shape == m.shape == c.shape[:2]):
        raise ValueError(f"shape mismatch: gray {g.shape}, color {c.shape[:2]}, mask {m.shape}")
    if m.all():
        raise ValueError("levin colorization needs at least one known pixel")
    out = np.where(m[..., None], 0.0, c)
    if not m.any():
        return out
    a_uu, coupling, unknown, known = levin_system(g, m, window_radius, sigma_floor)
    diag = a_uu.diagonal()
    precond = np.divide(1.0, diag, out=np.zeros_like(diag), where=diag > 0)
    flat = out.reshape(-1, 3)
    for ch in range(3):
        b = -(coupling @ flat[known, ch])
        try:
            res = cg_solve(a_uu, b, tol, max_iters, precond=precond)
        except CGBreakdownError as exc:
            raise LevinSolveError(ch, exc) from exc
        if not res.converged:
            raise LevinSolveError(ch, RuntimeError(f"no convergence, residual {res.residual_norm:.3e}"))
        flat[unknown, ch] = res.x
    return np.clip(out, 0.0, 1.0)
