"""Internal colorization with a coarse-to-fine generator pyramid.

Each level ``n`` owns a small ResNet-style generator. Level 0 maps the
coarsest gray image to RGB; every finer level sees its gray image stacked with
the bilinearly upsampled output of the level below. Generators are trained one
after another on the single input image, with an L1 loss restricted to the
known (mask = 0) pixels, and frozen once their level is done.
"""
from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .imaging import (
    as_gray,
    as_mask,
    as_rgb,
    bilinear_upsample,
    build_pyramids,
    reattach_luminance,
)
from .nn import (
    AdamState,
    BatchNorm,
    Conv2d,
    LeakyReLU,
    NetworkParams,
    ResidualBlock,
    ScaleSkip,
    TrainHyper,
    adam_step,
    backward,
    forward,
    init_params,
)
from .nn.adam import NonFiniteGradientError
from .seeding import derive_rng

log = logging.getLogger(__name__)


class TrainingError(FloatingPointError):
    def __init__(self, level: int, iteration: int, reason: str):
        super().__init__(f"level {level}, iteration {iteration}: {reason}")
        self.level = level
        self.iteration = iteration


class EmptyLossRegionWarning(UserWarning):
    """The loss had no known pixels to compare against."""


@dataclass(frozen=True)
class GeneratorSpec:
    feature_channels: int = 32
    residual_blocks: int = 9
    input_channels: int = 1
    output_channels: int = 3
    output_kernel: int = 1
    # resolution reduction of the residual trunk; 1 keeps it at full resolution
    trunk_scale: int = 2
    slope: float = 0.2
    # levels n >= 1 predict a correction added to the upsampled previous output
    residual_output: bool = True
    output_init_gain: float = 0.01


def build_generator(spec: GeneratorSpec) -> list:
    f = spec.feature_channels
    blocks = [ResidualBlock(f, spec.slope) for _ in range(spec.residual_blocks)]
    trunk = blocks if spec.trunk_scale == 1 else [ScaleSkip(blocks, spec.trunk_scale)]
    return [
        Conv2d(spec.input_channels, f, 3),
        BatchNorm(f),
        LeakyReLU(spec.slope),
        *trunk,
        Conv2d(f, spec.output_channels, spec.output_kernel, init_gain=spec.output_init_gain),
    ]


def generator_param_count(spec: GeneratorSpec) -> int:
    """Closed-form trainable parameter count of :func:`build_generator`."""
    f, k = spec.feature_channels, spec.output_kernel
    head = spec.input_channels * f * 9 + f + 2 * f
    block = 2 * (f * f * 9 + f + 2 * f)
    tail = f * spec.output_channels * k * k + spec.output_channels
    return head + spec.residual_blocks * block + tail


@dataclass(frozen=True)
class LevelSchedule:
    iterations: int
    learning_rate: float

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not self.learning_rate > 0:
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")


DEFAULT_SCHEDULES = (
    LevelSchedule(500, 0.01),
    LevelSchedule(1000, 0.005),
    LevelSchedule(1000, 0.003),
)


@dataclass(frozen=True)
class HintPoint:
    row: int
    col: int
    color: tuple[float, float, float]


@dataclass(frozen=True)
class ColorizeConfig:
    pyramid_height: int = 3
    schedules: tuple[LevelSchedule, ...] = DEFAULT_SCHEDULES
    seed: int = 0
    reattach_luminance: bool = False
    hints: tuple[HintPoint, ...] = ()
    generator: GeneratorSpec = GeneratorSpec()
    factor: int = 2

    def __post_init__(self):
        if len(self.schedules) != self.pyramid_height:
            raise ValueError(
                f"{len(self.schedules)} level schedules given for a pyramid of height {self.pyramid_height}"
            )

    def with_iterations(self, iterations) -> "ColorizeConfig":
        """Same learning rates, different per-level iteration counts."""
        scheds = tuple(LevelSchedule(int(it), s.learning_rate) for it, s in zip(iterations, self.schedules))
        if len(scheds) != self.pyramid_height:
            raise ValueError("one iteration count per level is required")
        return replace(self, schedules=scheds)


@dataclass
class LevelResult:
    params: NetworkParams
    layers: list
    output: np.ndarray
    losses: np.ndarray
    steps: int
    seconds: float


@dataclass
class ColorizeResult:
    output: np.ndarray
    per_level_outputs: list[np.ndarray]
    loss_trace: list[np.ndarray]
    levels: list[LevelResult] = field(default_factory=list, repr=False)

    def trace_rows(self):
        for n, losses in enumerate(self.loss_trace):
            for i, value in enumerate(losses):
                yield n, i, float(value)


# --- loss -----------------------------------------------------------------------------


def _to_tensor(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim == 2:
        return img[None, None].astype(dtype)
    return np.ascontiguousarray(img.transpose(2, 0, 1)[None], dtype=dtype)


def _to_image(t: np.ndarray) -> np.ndarray:
    return np.asarray(t[0].transpose(1, 2, 0), dtype=np.float64)


def _as_tensor(a) -> np.ndarray:
    a = np.asarray(a)
    return a if a.ndim == 4 else _to_tensor(a, a.dtype)


def masked_l1(pred: np.ndarray, target: np.ndarray, mask) -> tuple[float, np.ndarray]:
    """Mean absolute error over known pixel-channels and its gradient w.r.t. ``pred``.

    ``pred``/``target`` are ``(N, C, H, W)`` tensors, ``mask`` is ``(H, W)``.
    """
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} does not match target {target.shape}")
    m = as_mask(mask)
    if m.shape != pred.shape[2:]:
        raise ValueError(f"mask shape {m.shape} does not match spatial dims {pred.shape[2:]}")
    known = (~m).astype(pred.dtype)[None, None]
    count = int((~m).sum()) * pred.shape[0] * pred.shape[1]
    if count == 0:
        warnings.warn("mask covers every pixel; masked loss is 0", EmptyLossRegionWarning, stacklevel=2)
        return 0.0, np.zeros_like(pred)
    diff = (pred - target) * known
    loss = float(np.abs(diff).sum(dtype=np.float64) / count)
    grad = np.sign(diff) * pred.dtype.type(1.0 / count)
    return loss, grad


def masked_l1_loss(pred, target, mask) -> float:
    """Masked L1 reconstruction loss; accepts ``(H, W, 3)`` images or tensors."""
    p, t = _as_tensor(pred), _as_tensor(target)
    return masked_l1(p.astype(np.float64), t.astype(np.float64), mask)[0]


# --- per-level training ---------------------------------------------------------------


def _level_input(gray: np.ndarray, prev: np.ndarray | None) -> np.ndarray:
    g = as_gray(gray)
    if prev is None:
        return _to_tensor(g)
    prev = as_rgb(prev)
    if prev.shape[:2] != g.shape:
        raise ValueError(f"previous output {prev.shape[:2]} is not upsampled to level size {g.shape}")
    return np.concatenate([_to_tensor(g), _to_tensor(prev)], axis=1)


def _is_residual(layers) -> bool:
    return getattr(layers, "residual_output", False)


class _Generator(list):
    """Layer list tagged with whether its output is added to the previous level."""

    residual_output = False


def level_forward(params: NetworkParams, layers, gray, prev=None, *, clamp: bool = True) -> np.ndarray:
    """Evaluate one generator on ``gray`` (level 0) or ``gray`` stacked with ``prev``."""
    x = _level_input(gray, prev)
    if x.shape[1] != layers[0].in_channels:
        raise ValueError(
            f"generator expects {layers[0].in_channels} input channels, level input has {x.shape[1]}"
        )
    y, _ = forward(params, layers, x, "eval")
    if prev is not None and _is_residual(layers):
        y = y + x[:, 1:]
    out = _to_image(y)
    return np.clip(out, 0.0, 1.0) if clamp else out


def train_level(
    n: int,
    gray,
    color,
    mask,
    prev_output,
    schedule: LevelSchedule,
    seed: int,
    spec: GeneratorSpec | None = None,
) -> LevelResult:
    """Fit generator ``n`` to the known pixels of ``color`` at one pyramid level.

    ``prev_output`` is the frozen output of level ``n - 1`` already upsampled to
    this level's size, or ``None`` for level 0.
    """
    if (prev_output is None) != (n == 0):
        raise ValueError("a previous output is required exactly for levels n >= 1")
    spec = spec or GeneratorSpec()
    spec = replace(spec, input_channels=1 if prev_output is None else 1 + spec.output_channels)
    layers = _Generator(build_generator(spec))
    layers.residual_output = spec.residual_output and prev_output is not None
    params = init_params(layers, derive_rng(seed, "level", n), np.float32)
    state = AdamState.zeros_like(params)
    hyper = TrainHyper(learning_rate=schedule.learning_rate, iterations=schedule.iterations, seed=seed)

    x = _level_input(gray, prev_output)
    target = _to_tensor(as_rgb(color))
    m = as_mask(mask)
    losses = np.empty(schedule.iterations)
    start = time.perf_counter()
    for it in range(schedule.iterations):
        y, tape = forward(params, layers, x, "train")
        if layers.residual_output:
            y = y + x[:, 1:]
        loss, grad = masked_l1(y, target, m)
        if not np.isfinite(loss):
            raise TrainingError(n, it, f"non-finite loss {loss}")
        losses[it] = loss
        grads, _ = backward(tape, grad)
        try:
            adam_step(params, grads, state, hyper)
        except NonFiniteGradientError as exc:
            raise TrainingError(n, it, str(exc)) from exc
    out = level_forward(params, layers, gray, prev_output)
    seconds = time.perf_counter() - start
    log.info("level %d (%dx%d): %d steps, loss %.4f -> %.4f, %.1fs",
             n, *m.shape, state.t, losses[0], losses[-1], seconds)
    return LevelResult(params, layers, out, losses, state.t, seconds)


# --- full procedures ------------------------------------------------------------------


def apply_hints(color: np.ndarray, mask: np.ndarray, hints) -> tuple[np.ndarray, np.ndarray]:
    """Treat each hint as a known pixel: clear the mask there and write its color."""
    color, mask = color.copy(), mask.copy()
    h, w = mask.shape
    for hint in hints:
        if not (0 <= hint.row < h and 0 <= hint.col < w):
            raise ValueError(f"hint at ({hint.row}, {hint.col}) lies outside the {h}x{w} image")
        mask[hint.row, hint.col] = False
        color[hint.row, hint.col] = np.clip(hint.color, 0.0, 1.0)
    return color, mask


def _prepare(gray, known_color, mask, hints):
    g = as_gray(gray)
    c = as_rgb(known_color)
    m = as_mask(mask)
    if not (g.shape == m.shape == c.shape[:2]):
        raise ValueError(f"shape mismatch: gray {g.shape}, color {c.shape[:2]}, mask {m.shape}")
    # colors under the mask are never visible to training
    c = np.where(m[..., None], 0.0, c)
    return g, *apply_hints(c, m, hints)


def colorize(gray, known_color, mask, cfg: ColorizeConfig = ColorizeConfig()) -> ColorizeResult:
    """Progressive colorization of ``gray`` guided by the known pixels of ``known_color``."""
    g, c, m = _prepare(gray, known_color, mask, cfg.hints)
    pyr = build_pyramids(c, m, cfg.pyramid_height, cfg.factor, gray=g)
    levels, outputs = [], []
    prev = None
    for n, (level, sched) in enumerate(zip(pyr.levels, cfg.schedules)):
        if n > 0:
            prev = bilinear_upsample(outputs[-1], *level.shape)
        res = train_level(n, level.gray, level.color, level.mask, prev, sched, cfg.seed, cfg.generator)
        levels.append(res)
        outputs.append(res.output)
    out = outputs[-1]
    if cfg.reattach_luminance:
        out = reattach_luminance(out, g)
    return ColorizeResult(out, outputs, [r.losses for r in levels], levels)


def colorize_base(gray, known_color, mask, cfg: ColorizeConfig = ColorizeConfig()) -> ColorizeResult:
    """Ablation without the pyramid: one gray-only generator at full resolution.

    Trained with the finest level's schedule.
    """
    g, c, m = _prepare(gray, known_color, mask, cfg.hints)
    res = train_level(0, g, c, m, None, cfg.schedules[-1], cfg.seed, cfg.generator)
    out = res.output
    if cfg.reattach_luminance:
        out = reattach_luminance(out, g)
    return ColorizeResult(out, [res.output], [res.losses], [res])
