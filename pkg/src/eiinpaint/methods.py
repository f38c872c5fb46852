"""Named colorization methods sharing one call signature.

Every method maps ``(gray, known_color, mask) -> RGB``. They are module-level
callables (or partials of them) so the benchmark can ship them to worker
processes.
"""
from __future__ import annotations

from functools import partial

import numpy as np

from .colorizer import ColorizeConfig, colorize, colorize_base
from .completion import diffusion_fill
from .imaging import as_mask, as_rgb
from .levin import levin_colorize

METHOD_NAMES = ("progressive", "base", "levin", "diffusion-only")
ALIASES = {"full": "progressive", "ours": "progressive", "diffusion": "diffusion-only"}


def canonical(name: str) -> str:
    key = ALIASES.get(name, name)
    if key not in METHOD_NAMES:
        valid = ", ".join(METHOD_NAMES + tuple(sorted(ALIASES)))
        raise ValueError(f"unknown method {name!r}; valid methods: {valid}")
    return key


def progressive(gray, known_color, mask, cfg: ColorizeConfig = ColorizeConfig()) -> np.ndarray:
    return colorize(gray, known_color, mask, cfg).output


def base(gray, known_color, mask, cfg: ColorizeConfig = ColorizeConfig()) -> np.ndarray:
    return colorize_base(gray, known_color, mask, cfg).output


def levin(gray, known_color, mask, cfg: ColorizeConfig | None = None) -> np.ndarray:
    return levin_colorize(gray, known_color, mask)


def diffusion_only(gray, known_color, mask, cfg: ColorizeConfig | None = None) -> np.ndarray:
    """Harmonic fill of each color channel; ignores the gray image entirely."""
    c = as_rgb(known_color)
    m = as_mask(mask)
    return np.stack([diffusion_fill(c[..., k], m).gray for k in range(3)], axis=-1)


_FUNCS = {"progressive": progressive, "base": base, "levin": levin, "diffusion-only": diffusion_only}


def get_method(name: str, cfg: ColorizeConfig = ColorizeConfig()):
    """Picklable ``f(gray, known_color, mask)`` for a method name or alias."""
    return partial(_FUNCS[canonical(name)], cfg=cfg)
