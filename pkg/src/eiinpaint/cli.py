"""Command-line entry point.

Exit codes: 0 success, 1 failed gradient check, 2 bad arguments,
3 I/O failure, 4 numeric failure. Messages go to standard error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .colorizer import DEFAULT_SCHEDULES, ColorizeConfig, HintPoint, LevelSchedule, TrainingError, colorize, colorize_base
from .completion import ConvergenceError, MonoMismatchError, diffusion_fill, load_external_mono
from .imaging import (
    ImageIOError,
    center_square,
    load_image,
    load_mask,
    save_gray,
    save_image,
    save_mask,
    to_monochrome,
)
from .levin import LevinSolveError
from .maskgen import MaskGenConfig, MaskRatioError, free_form_mask, mask_ratio, scale_mask_to_ratio
from .methods import METHOD_NAMES, canonical, get_method
from .metrics import MaskSpec, benchmark_decolorize, decolorize_inputs, psnr

EXIT_OK, EXIT_GRADCHECK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4
JOBS_ENV = "EIINPAINT_JOBS"
IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}

log = logging.getLogger("eiinpaint")


class UsageError(Exception):
    """Bad arguments detected after parsing; maps to exit code 2."""


# --- argument helpers -------------------------------------------------------------------


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _stroke_range(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b, got {text!r}") from None
    if not 0 <= lo <= hi:
        raise argparse.ArgumentTypeError(f"stroke range needs 0 <= a <= b, got {text!r}")
    return lo, hi


def _default_jobs() -> int:
    raw = os.environ.get(JOBS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def read_config_file(path) -> dict[str, str]:
    """Plain ``key = value`` lines; ``#`` starts a comment. Keys use flag names."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        values[key.lstrip("-").replace("-", "_")] = value
    return values


def read_hints(path) -> tuple[HintPoint, ...]:
    hints = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 5:
            raise UsageError(f"{path}:{lineno}: expected 'row col R G B', got {line!r}")
        try:
            row, col = int(parts[0]), int(parts[1])
            rgb = tuple(float(v) for v in parts[2:])
        except ValueError:
            raise UsageError(f"{path}:{lineno}: malformed hint {line!r}") from None
        if not all(0.0 <= v <= 1.0 for v in rgb):
            raise UsageError(f"{path}:{lineno}: hint colors must lie in [0, 1]")
        hints.append(HintPoint(row, col, rgb))
    return tuple(hints)


def write_trace(path, result) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["level", "iteration", "loss"])
        for level, it, loss in result.trace_rows():
            writer.writerow([level, it, repr(loss)])


def _colorize_config(args, hints=()) -> ColorizeConfig:
    height = args.pyramid_height
    iters = args.iterations
    lrs = args.learning_rates
    if height == len(DEFAULT_SCHEDULES):
        defaults = DEFAULT_SCHEDULES
    else:
        # other heights reuse the finest default schedule everywhere unless overridden
        defaults = (DEFAULT_SCHEDULES[-1],) * height
    if iters is not None and len(iters) != height:
        raise UsageError(f"--iterations needs {height} values (one per level), got {len(iters)}")
    if lrs is not None and len(lrs) != height:
        raise UsageError(f"--learning-rates needs {height} values (one per level), got {len(lrs)}")
    try:
        schedules = tuple(
            LevelSchedule(
                iters[i] if iters is not None else d.iterations,
                lrs[i] if lrs is not None else d.learning_rate,
            )
            for i, d in enumerate(defaults)
        )
        return ColorizeConfig(
            pyramid_height=height,
            schedules=schedules,
            seed=args.seed,
            reattach_luminance=args.reattach_luminance,
            hints=tuple(hints),
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _check_method(name: str) -> str:
    try:
        return canonical(name)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _run_method(method: str, gray, known, mask, cfg):
    """Returns (output, result-with-trace or None)."""
    if method == "progressive":
        res = colorize(gray, known, mask, cfg)
        return res.output, res
    if method == "base":
        res = colorize_base(gray, known, mask, cfg)
        return res.output, res
    return get_method(method, cfg)(gray, known, mask), None


def _list_images(directory: Path) -> list[Path]:
    if not directory.is_dir():
        raise UsageError(f"dataset directory {directory} does not exist")
    files = sorted(p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise UsageError(f"no images found in {directory}")
    return files


def _load_sized(path, size):
    img = load_image(path)
    return center_square(img, size) if size else img


# --- subcommands ------------------------------------------------------------------------


def cmd_inpaint(args) -> int:
    method = _check_method(args.method)
    img = load_image(args.image)
    mask = load_mask(args.mask)
    if mask.shape != img.shape[:2]:
        raise UsageError(f"mask is {mask.shape[0]}x{mask.shape[1]} but the image is {img.shape[0]}x{img.shape[1]}")
    hints = read_hints(args.hints) if args.hints else ()
    cfg = _colorize_config(args, hints)
    out_path = Path(args.out)

    gray = to_monochrome(img)
    if args.mono:
        completion = load_external_mono(args.mono, gray, mask, strict=not args.mono_force)
    elif mask.any():
        completion = diffusion_fill(gray, mask)
    else:
        completion = None
    mono = completion.gray if completion is not None else gray
    known = np.where(mask[..., None], 0.0, img)

    start = time.perf_counter()
    output, result = _run_method(method, mono, known, mask, cfg)
    log.info("%s colorization took %.1fs", method, time.perf_counter() - start)
    raw = output
    if args.composite:
        output = np.where(mask[..., None], output, img)

    save_image(output, out_path)
    if args.save_mono:
        save_gray(mono, args.save_mono)
    trace_path = Path(args.trace) if args.trace else out_path.with_name(out_path.stem + "_trace.csv")
    if result is not None:
        write_trace(trace_path, result)
    if (~mask).any():
        fidelity = psnr(raw, img, ~mask)
        print(f"known-pixel PSNR of the colorization: {fidelity:.2f} dB", file=sys.stderr)
    return EXIT_OK


def cmd_colorize(args) -> int:
    """Restore color under the mask given the true monochrome (de-colorization setting)."""
    method = _check_method(args.method)
    img = load_image(args.image)
    mask = load_mask(args.mask)
    if mask.shape != img.shape[:2]:
        raise UsageError(f"mask is {mask.shape[0]}x{mask.shape[1]} but the image is {img.shape[0]}x{img.shape[1]}")
    hints = read_hints(args.hints) if args.hints else ()
    cfg = _colorize_config(args, hints)
    gray, known, m = decolorize_inputs(img, mask)
    output, result = _run_method(method, gray, known, m, cfg)
    out_path = Path(args.out)
    save_image(output, out_path)
    if result is not None:
        trace_path = Path(args.trace) if args.trace else out_path.with_name(out_path.stem + "_trace.csv")
        write_trace(trace_path, result)
    if m.any():
        print(f"masked PSNR vs input: {psnr(output, img, m):.2f} dB", file=sys.stderr)
    return EXIT_OK


def cmd_maskgen(args) -> int:
    lo, hi = args.strokes
    cfg = MaskGenConfig(min_strokes=lo, max_strokes=hi, seed=args.seed)
    try:
        mask = free_form_mask(args.height, args.width, cfg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.ratio is not None:
        if not 0.0 < args.ratio < 1.0:
            raise UsageError(f"--ratio must lie in (0, 1), got {args.ratio}")
        mask = scale_mask_to_ratio(mask, args.ratio, args.tolerance, seed=args.seed)
    save_mask(mask, args.out)
    print(f"mask ratio {mask_ratio(mask):.4f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    methods = [m for m in args.methods.split(",") if m]
    for m in methods:
        _check_method(m)
    if len(set(methods)) != len(methods):
        raise UsageError("--methods lists a method twice")
    if args.seeds < 1:
        raise UsageError("--seeds must be >= 1")
    files = _list_images(Path(args.dataset))
    cfg = _colorize_config(args)
    images = [(p.stem, _load_sized(p, args.size)) for p in files]
    spec = MaskSpec(args.mask_type, args.ratio)
    report = benchmark_decolorize(
        images,
        spec,
        {m: get_method(m, cfg) for m in methods},
        seeds=[args.seed + k for k in range(args.seeds)],
        jobs=args.jobs,
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(out / "report.csv")
    table = report.format_table()
    (out / "summary.txt").write_text(table + "\n")
    print(table)
    failed = [r for r in report.rows if r.status.startswith("error")]
    for r in failed:
        print(f"{r.image}/{r.method}/seed {r.seed}: {r.status}", file=sys.stderr)
    return EXIT_OK


def cmd_ablate_ratio(args) -> int:
    ratios = args.ratios
    if not ratios or not all(0.0 < r < 1.0 for r in ratios):
        raise UsageError(f"--ratios must all lie in (0, 1), got {ratios}")
    method = _check_method(args.method)
    img = _load_sized(args.image, args.size)
    h, w = img.shape[:2]
    cfg = _colorize_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for k in range(args.seeds):
        seed = args.seed + k
        base_mask = free_form_mask(h, w, MaskGenConfig(seed=seed))
        for ratio in ratios:
            tag = f"r{round(ratio * 1000):03d}_s{seed}"
            row = {"ratio": f"{ratio:.3f}", "seed": seed, "achieved": "", "psnr_masked": "", "status": "ok"}
            try:
                mask = scale_mask_to_ratio(base_mask, ratio, args.tolerance, seed=seed)
            except MaskRatioError as exc:
                row["status"] = f"unreachable: {exc}"
                rows.append(row)
                continue
            gray, known, m = decolorize_inputs(img, mask)
            output, _ = _run_method(method, gray, known, m, cfg)
            save_image(output, out / f"{tag}.png")
            save_mask(mask, out / f"{tag}_mask.png")
            row["achieved"] = f"{mask_ratio(mask):.4f}"
            row["psnr_masked"] = f"{psnr(output, img, m):.6f}"
            rows.append(row)
            print(f"ratio {ratio:.3f} seed {seed}: masked PSNR {row['psnr_masked']}", file=sys.stderr)
    with open(out / "ratios.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["ratio", "seed", "achieved", "psnr_masked", "status"], lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .nn.gradcheck import run_suite

    start = time.perf_counter()
    reports = run_suite(tol=args.tol, corrupt=args.corrupt, seed=args.seed)
    for rep in reports:
        print(rep.line())
    ok = all(rep.passed for rep in reports)
    print(f"{'PASS' if ok else 'FAIL'}: {sum(r.passed for r in reports)}/{len(reports)} layer kinds "
          f"within {args.tol:g} ({time.perf_counter() - start:.1f}s)")
    return EXIT_OK if ok else EXIT_GRADCHECK


# --- parser -----------------------------------------------------------------------------


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-v", "--verbose", action="store_true")


def _add_training(p: argparse.ArgumentParser, method_default: str = "progressive") -> None:
    p.add_argument("--method", default=method_default, help=f"one of {', '.join(METHOD_NAMES)}")
    p.add_argument("--pyramid-height", type=int, default=len(DEFAULT_SCHEDULES))
    p.add_argument("--iterations", type=_int_list, help="per-level iteration counts, e.g. 500,1000,1000")
    p.add_argument("--learning-rates", type=_float_list, help="per-level learning rates, e.g. 0.01,0.005,0.003")
    p.add_argument("--reattach-luminance", action=argparse.BooleanOptionalAction, default=False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eiinpaint", description="Monochrome-bottleneck inpainting with internal colorization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inpaint", help="complete the monochrome and colorize the hole")
    p.add_argument("image")
    p.add_argument("mask", help="8-bit gray PNG, >= 128 marks missing pixels")
    p.add_argument("--out", required=True)
    p.add_argument("--mono", help="externally completed monochrome (8-bit gray PNG)")
    p.add_argument("--mono-force", action="store_true", help="overwrite mismatching known pixels instead of failing")
    p.add_argument("--hints", help="file with one 'row col R G B' line per hint")
    p.add_argument("--trace", help="loss-trace CSV path (default: <out>_trace.csv)")
    p.add_argument("--save-mono", help="also write the completed monochrome here")
    p.add_argument("--composite", action=argparse.BooleanOptionalAction, default=True,
                   help="copy known pixels from the input into the output (default on)")
    _add_training(p)
    _add_common(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("colorize", help="restore hidden color under the mask using the true monochrome")
    p.add_argument("image")
    p.add_argument("mask")
    p.add_argument("--out", required=True)
    p.add_argument("--hints")
    p.add_argument("--trace")
    _add_training(p)
    _add_common(p)
    p.set_defaults(func=cmd_colorize)

    p = sub.add_parser("maskgen", help="draw a free-form brush-stroke mask")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, required=True)
    p.add_argument("--strokes", type=_stroke_range, default=(1, 8), help="stroke count range a:b")
    p.add_argument("--ratio", type=float, help="grow or shrink the mask to this missing fraction")
    p.add_argument("--tolerance", type=float, default=0.005)
    p.add_argument("--out", required=True)
    _add_common(p)
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("eval", help="de-colorization benchmark over a directory of images")
    p.add_argument("--dataset", required=True)
    p.add_argument("--mask-type", choices=("rect", "freeform"), default="rect")
    p.add_argument("--ratio", type=float, default=0.25)
    p.add_argument("--methods", default="progressive,base,levin")
    p.add_argument("--seeds", type=int, default=1, help="mask realizations per image")
    p.add_argument("--size", type=int, help="center-crop and resize images to this square size")
    p.add_argument("--jobs", type=int, default=_default_jobs(), help=f"worker processes (default ${JOBS_ENV} or 1)")
    p.add_argument("--out", required=True, help="output directory for report.csv and summary.txt")
    _add_training(p)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate-ratio", help="colorize one image at several mask ratios")
    p.add_argument("image")
    p.add_argument("--ratios", type=_float_list, default=[0.225, 0.489, 0.734])
    p.add_argument("--seeds", type=int, default=1)
    p.add_argument("--size", type=int)
    p.add_argument("--tolerance", type=float, default=0.01)
    p.add_argument("--out", required=True)
    _add_training(p)
    _add_common(p)
    p.set_defaults(func=cmd_ablate_ratio)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer's backward pass")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--corrupt", action="store_true", help="swap in a layer with a wrong gradient (negative control)")
    _add_common(p)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def _parse(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    args = parser.parse_args(argv)
    if not getattr(args, "config", None):
        return args
    try:
        values = read_config_file(args.config)
    except OSError as exc:
        raise ImageIOError(f"cannot read config {args.config}: {exc}") from exc
    subparser = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest: a for a in subparser._actions}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise UsageError(f"{args.config}: unknown keys {', '.join(unknown)}")
    for key, value in values.items():
        action = known[key]
        if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
            values[key] = value.lower() in ("1", "true", "yes", "on")
    # flags win: re-parse with the file's values as defaults
    subparser.set_defaults(**values)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MonoMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (TrainingError, ConvergenceError, LevinSolveError, MaskRatioError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
