"""Finite-difference verification of the analytic backward passes."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import BatchNorm, BilinearUp, BoxDown, Conv2d, LeakyReLU, ResidualBlock, ScaleSkip
from .network import NetworkParams, backward, forward, init_params


@dataclass
class GradCheckReport:
    name: str
    tol: float
    max_rel_error: float
    worst: str
    errors: dict[str, float] = field(default_factory=dict)
    checked: int = 0

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_error <= self.tol)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name:<16} max_rel_err={self.max_rel_error:.3e} "
            f"(tol {self.tol:.0e}, {self.checked} entries, worst {self.worst})"
        )


def _rel_error(a: np.ndarray, n: np.ndarray, floor: float) -> np.ndarray:
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def grad_check(
    layers,
    x: np.ndarray,
    tol: float = 1e-4,
    *,
    name: str = "network",
    seed: int = 0,
    step: float = 1e-6,
    max_entries: int | None = None,
    params: NetworkParams | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences in float64.

    The scalar under test is ``sum(output * R)`` for a fixed random ``R``.
    Tensors larger than ``max_entries`` are checked on a random subset of
    entries. The relative error is ``|a - n| / max(|a|, |n|, 1e-3 * G)`` where
    ``G`` is the largest analytic gradient magnitude in the network, so entries
    that are analytically zero (a conv bias feeding batch-norm) are judged
    against the network's gradient scale instead of against 0.
    """
    rng = np.random.default_rng(seed)
    x = np.asarray(x, dtype=np.float64)
    if params is None:
        params = init_params(layers, rng, np.float64)
    params = params.astype(np.float64)
    # perturb batch-norm affine terms away from the identity so they are exercised
    for k, v in params.weights.items():
        if k.endswith("scale") or k.endswith("shift") or k.endswith("bias"):
            v += rng.uniform(-0.5, 0.5, size=v.shape)

    y, tape = forward(params, layers, x, "train")
    proj = rng.standard_normal(y.shape)
    grads, dx = backward(tape, proj)

    def loss() -> float:
        out, _ = forward(params, layers, x, "train")
        return float(np.sum(out * proj))

    targets = [(k, params.weights[k], grads[k]) for k in params.weights]
    targets.append(("input", x, dx))

    scale = max(float(np.abs(t[2]).max(initial=0.0)) for t in targets)
    floor = 1e-3 * max(scale, 1e-12)
    errors: dict[str, float] = {}
    worst, worst_err, checked = "-", 0.0, 0
    for key, arr, analytic in targets:
        flat = arr.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = loss()
            flat[i] = orig - step
            down = loss()
            flat[i] = orig
            numeric[j] = (up - down) / (2 * step)
        a = analytic.reshape(-1)[idx]
        err = _rel_error(a, numeric, floor)
        errors[key] = float(err.max(initial=0.0))
        checked += idx.size
        if errors[key] >= worst_err:
            worst, worst_err = key, errors[key]
    return GradCheckReport(name, tol, worst_err, worst, errors, checked)


@dataclass
class CorruptedLeakyReLU(LeakyReLU):
    """Negative control: backward uses the wrong negative slope."""

    kind = "corrupted-leaky-relu"

    def backward(self, p, cache, dy):
        return np.where(cache, dy, dy * 0.5), {}


def standard_cases(corrupt: bool = False):
    """Named ``(layers, input)`` cases covering every layer kind on 1x4x8x8 inputs."""
    from ..colorizer import GeneratorSpec, build_generator

    rng = np.random.default_rng(1234)
    x = rng.standard_normal((1, 4, 8, 8))
    act = CorruptedLeakyReLU() if corrupt else LeakyReLU()
    cases = [
        ("conv3x3", [Conv2d(4, 4, 3)], x, None),
        ("conv1x1", [Conv2d(4, 3, 1)], x, None),
        ("batchnorm", [BatchNorm(4)], x, None),
        ("leaky-relu", [act], x, None),
        ("residual-block", [ResidualBlock(4)], x, None),
        ("bilinear-up", [BilinearUp(2), Conv2d(4, 2, 3)], x, None),
        ("box-down", [BoxDown(2), Conv2d(4, 2, 3)], x, None),
        ("scale-skip", [ScaleSkip([Conv2d(4, 4, 3), BatchNorm(4), LeakyReLU()])], x, None),
        ("generator", build_generator(GeneratorSpec(input_channels=4)), x, 6),
    ]
    return cases


def run_suite(tol: float = 1e-4, corrupt: bool = False, seed: int = 0) -> list[GradCheckReport]:
    reports = []
    for name, layers, x, max_entries in standard_cases(corrupt):
        reports.append(grad_check(layers, x, tol, name=name, seed=seed, max_entries=max_entries))
    return reports
