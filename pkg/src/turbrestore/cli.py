"""Command-line front end: ``turbrestore <command> [options]``.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import glob
import logging
import os
import sys
import time
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .deconv import DeconvConfig, blind_deconvolve
from .imageio import ImageFormatError, load_image, load_kernel, read_flow, save_image, save_kernel, write_flow
from .metrics import MetricReport, kernel_correlation, mean_endpoint_error, psnr
from .pipelines import PIPELINE_REGISTRATION_ITERATIONS, PipelineConfig, dfr_restore, frd_restore
from .registration import CauchyNavierParams, ParameterWarning, RegistrationConfig, register
from .simulate import SimConfig, read_manifest, save_ground_truth, simulate, test_card, write_manifest
from .temporal import temporal_filter

log = logging.getLogger("turbrestore")

IMAGE_SUFFIXES = (".png", ".pgm")


class UsageError(Exception):
    pass


def _positive(kind):
    def parse(text):
        value = kind(text)
        if value <= 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return value

    return parse


def _nonnegative(text):
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
    return value


def _odd(text):
    value = int(text)
    if value < 3 or value % 2 == 0:
        raise argparse.ArgumentTypeError(f"must be odd and >= 3, got {text}")
    return value


def _add_deconv_flags(p, alpha1, alpha2):
    p.add_argument("--alpha1", type=_positive(float), default=alpha1, help="TV weight on the image")
    p.add_argument("--alpha2", type=_positive(float), default=alpha2, help="TV weight on the kernel")
    p.add_argument("--epsilon", type=_positive(float), default=1e-3, help="TV smoothing constant")
    p.add_argument("--kernel-size", type=_odd, default=15)
    p.add_argument("--deconv-iters", type=_positive(int), default=10, help="outer alternations")


def _add_registration_flags(p, iterations=RegistrationConfig.max_iterations):
    p.add_argument("--alpha", type=_nonnegative, default=0.01, help="Laplacian weight of L")
    p.add_argument("--gamma", type=_positive(float), default=0.7, help="zeroth-order weight of L")
    p.add_argument("--steps", type=_positive(int), default=RegistrationConfig.time_steps, help="time steps T")
    p.add_argument("--data-weight", type=_positive(float), default=RegistrationConfig.data_weight)
    p.add_argument("--step-size", type=_positive(float), default=RegistrationConfig.step_size)
    p.add_argument("--reg-iters", type=_positive(int), default=iterations, help="descent iterations per registration")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="turbrestore", description="Turbulence-degraded sequence restoration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value file; explicit flags take precedence")
        p.add_argument("--threads", type=_positive(int), default=os.cpu_count() or 1)
        return p

    p = command("simulate", "generate a degraded sequence with ground truth")
    p.add_argument("--input", required=True, help="clean image, or 'testcard[:SIZE]'")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--frames", type=_positive(int), default=20)
    p.add_argument("--blur-sigma", type=_nonnegative, default=1.0)
    p.add_argument("--warp-amplitude", type=_nonnegative, default=2.0)
    p.add_argument("--warp-correlation", type=_positive(float), default=8.0)
    p.add_argument("--noise-sigma", type=_nonnegative, default=0.01)
    p.add_argument("--kernel-size", type=int, default=None)

    p = command("tfilter", "temporal mean/median of a frame sequence")
    p.add_argument("--frames", required=True, help="directory or glob of frames")
    p.add_argument("--mode", choices=("mean", "median"), default="median")
    p.add_argument("--out", required=True)

    p = command("deconv", "blind TV deconvolution of one image")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel-out", help="default: <out>_kernel.pgm")
    p.add_argument("--trace-out", help="default: <out>_energy.csv")
    _add_deconv_flags(p, alpha1=1e-5, alpha2=1e-3)
    p.add_argument("--iters", dest="deconv_iters", type=_positive(int), default=10)

    p = command("register", "diffeomorphic registration of one image onto another")
    p.add_argument("--moving", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out-warped", required=True)
    p.add_argument("--out-map", help="write the forward displacement map (.flo)")
    _add_registration_flags(p)

    p = command("restore", "run the FRD or DFR pipeline on a sequence")
    p.add_argument("--frames", required=True)
    p.add_argument("--pipeline", choices=("frd", "dfr"), required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("-K", "--iterations", type=_positive(int), default=1)
    p.add_argument("--filter", choices=("mean", "median"), default="median")
    _add_deconv_flags(p, alpha1=2e-2, alpha2=1.0)
    _add_registration_flags(p, iterations=PIPELINE_REGISTRATION_ITERATIONS)

    p = command("score", "compare a restoration against simulator ground truth")
    p.add_argument("--restored", required=True)
    p.add_argument("--truth-dir", required=True)
    p.add_argument("--map", help="estimated displacement (.flo) to compare with warp_NNNN.flo")
    p.add_argument("--frame", type=int, default=0, help="frame index for --map")
    p.add_argument("--kernel", help="estimated kernel image to compare with kernel.pgm")
    p.add_argument("--csv", help="append the report as a CSV row")
    return parser


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    sub = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    name = next((a for a in argv if a in sub.choices), None)
    if name is None:
        return
    subparser = sub.choices[name]
    try:
        entries = read_manifest(known.config)
    except (OSError, ValueError) as exc:
        parser.error(f"cannot read config {known.config}: {exc}")
    actions = {a.dest: a for a in subparser._actions}
    defaults = {}
    for key, text in entries.items():
        dest = key.replace("-", "_")
        action = actions.get(dest)
        if action is None:
            parser.error(f"unknown config key {key!r} for {name}")
        try:
            defaults[dest] = action.type(text) if action.type else text
        except (argparse.ArgumentTypeError, ValueError) as exc:
            parser.error(f"config key {key}: {exc}")
        action.required = False
    subparser.set_defaults(**defaults)


def _manifest(args, outputs: dict, started: float, extra: dict | None = None) -> dict:
    entries = {
        "command_line": " ".join(sys.argv),
        "command": args.command,
        "version": __version__,
    }
    for key, value in sorted(vars(args).items()):
        if key not in ("command", "verbose", "config"):
            entries[f"arg.{key}"] = value
    entries.update(outputs)
    entries.update(extra or {})
    entries["wall_clock_seconds"] = f"{time.perf_counter() - started:.3f}"
    return entries


def discover_frames(spec: str) -> list[Path]:
    path = Path(spec)
    if path.is_dir():
        files = [p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.name.startswith("frame")]
        if not files:
            files = [p for p in path.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES]
    else:
        files = [Path(p) for p in glob.glob(spec) if Path(p).suffix.lower() in IMAGE_SUFFIXES]
    files = sorted(files, key=lambda p: p.name)
    if not files:
        raise UsageError(f"no frames found in {spec}")
    return files


def _load_input(spec: str) -> np.ndarray:
    if spec.startswith("testcard") and not Path(spec).exists():
        _, _, size = spec.partition(":")
        try:
            return test_card(int(size) if size else 128)
        except ValueError:
            raise UsageError(f"bad testcard size in {spec!r}") from None
    return load_image(spec)


def _registration_config(args) -> RegistrationConfig:
    params = CauchyNavierParams(alpha=args.alpha, gamma=args.gamma)
    for msg in params.box_violations():
        print(f"warning: {msg} (recommended alpha in [0.01, 0.3], gamma in [0.1, 1], alpha < gamma)", file=sys.stderr)
    return RegistrationConfig(
        params=params,
        data_weight=args.data_weight,
        time_steps=args.steps,
        step_size=args.step_size,
        max_iterations=args.reg_iters,
    )


def _deconv_config(args) -> DeconvConfig:
    return DeconvConfig(
        alpha1=args.alpha1,
        alpha2=args.alpha2,
        epsilon_tv=args.epsilon,
        kernel_size=args.kernel_size,
        outer_iterations=args.deconv_iters,
    )


# --- commands ---


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    clean = _load_input(args.input)
    cfg = SimConfig(
        seed=args.seed,
        frames=args.frames,
        blur_sigma=args.blur_sigma,
        warp_amplitude=args.warp_amplitude,
        warp_correlation_length=args.warp_correlation,
        noise_sigma=args.noise_sigma,
        kernel_size=args.kernel_size,
    )
    gt = simulate(clean, cfg)
    out = Path(args.out)
    save_ground_truth(gt, out)
    entries = {k: ("" if v is None else v) for k, v in asdict(cfg).items()}
    entries.update(_manifest(args, {"output_dir": out}, started))
    write_manifest(out / "manifest.txt", entries)
    print(f"wrote {cfg.frames} frames to {out}")
    return 0


def cmd_tfilter(args) -> int:
    files = discover_frames(args.frames)
    out = temporal_filter([load_image(f) for f in files], args.mode)
    save_image(out, args.out)
    print(f"{args.mode} of {len(files)} frames -> {args.out}")
    return 0


def cmd_deconv(args) -> int:
    started = time.perf_counter()
    observed = load_image(args.input)
    result = blind_deconvolve(observed, _deconv_config(args))
    out = Path(args.out)
    kernel_out = Path(args.kernel_out) if args.kernel_out else out.with_name(out.stem + "_kernel.pgm")
    trace_out = Path(args.trace_out) if args.trace_out else out.with_name(out.stem + "_energy.csv")
    save_image(result.image, out)
    save_kernel(result.kernel, kernel_out)
    with trace_out.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "energy"])
        for i, e in enumerate(result.energy_trace):
            writer.writerow([i, repr(e)])
    write_manifest(out.with_name(out.stem + "_manifest.txt"),
                   _manifest(args, {"image": out, "kernel": kernel_out, "trace": trace_out}, started))
    print(f"energy={result.energy_trace[-1]!r}")
    return 0


def cmd_register(args) -> int:
    moving = load_image(args.moving)
    reference = load_image(args.reference)
    cfg = _registration_config(args)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterWarning)
        result = register(moving, reference, cfg)
    save_image(result.warped, args.out_warped)
    if args.out_map:
        write_flow(result.forward_map, args.out_map)
    print(f"energy={result.energy_trace[-1]!r}")
    print(f"iterations={result.iterations}")
    return 0


def cmd_restore(args) -> int:
    started = time.perf_counter()
    files = discover_frames(args.frames)
    frames = [load_image(f) for f in files]
    cfg = PipelineConfig(
        iterations=args.iterations,
        reference_filter=args.filter,
        deconv=_deconv_config(args),
        registration=_registration_config(args),
        workers=args.threads,
    )
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ParameterWarning)
        report = (frd_restore if args.pipeline == "frd" else dfr_restore)(frames, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_image(report.restored, out / "restored.png")
    for k, ref in enumerate(report.references):
        save_image(ref, out / f"reference_{k:02d}.png")
    with (out / "registration_energies.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iteration", "frame", "file", "energy"])
        for k, row in enumerate(report.per_frame_registration_energies):
            for n, e in enumerate(row):
                writer.writerow([k + 1, n, files[n].name, repr(float(e))])
    extra = {
        "frames": len(files),
        "deconvolutions": report.deconvolution_count,
        "references": len(report.references),
        "dropped_frames": ",".join(map(str, report.dropped_frames)),
    }
    write_manifest(out / "manifest.txt", _manifest(args, {"restored": out / "restored.png"}, started, extra))
    log.info("%s: %d deconvolution(s), %d references", args.pipeline, report.deconvolution_count, len(report.references))
    print(f"restored -> {out / 'restored.png'}")
    return 0


def cmd_score(args) -> int:
    truth = Path(args.truth_dir)
    required = [truth / "clean.png", truth / "manifest.txt"]
    if args.map:
        required.append(truth / f"warp_{args.frame:04d}.flo")
    if args.kernel:
        required.append(truth / "kernel.pgm")
    missing = [str(p) for p in required if not p.is_file()]
    if missing:
        raise UsageError("truth directory is missing: " + ", ".join(missing))
    report = MetricReport(psnr_db=psnr(load_image(args.restored), load_image(truth / "clean.png")))
    if args.map:
        report.mean_endpoint_error_px = mean_endpoint_error(read_flow(args.map), read_flow(required[2]))
    if args.kernel:
        report.kernel_correlation = kernel_correlation(load_kernel(args.kernel), load_kernel(truth / "kernel.pgm"))
    sys.stdout.write(report.to_text())
    if args.csv:
        report.append_csv(args.csv, {"restored": args.restored})
    return 0


COMMANDS = {
    "simulate": cmd_simulate,
    "tfilter": cmd_tfilter,
    "deconv": cmd_deconv,
    "register": cmd_register,
    "restore": cmd_restore,
    "score": cmd_score,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"turbrestore {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ImageFormatError, ValueError, RuntimeError) as exc:
        print(f"turbrestore {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
