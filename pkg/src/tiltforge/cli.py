"""Batch command line: project, fit-noise, simulate, reconstruct, export-png.

Exit codes: 0 success, 2 I/O or file-format problem, 3 invalid input,
4 anything else.  Every command that writes an MRC also writes
``<output>.manifest.json`` with its parameters and SHA-256 digests of the
inputs and outputs.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, featnet
from .core import (
    DensityVolume,
    FormatError,
    IndexOutOfRange,
    MissingStyle,
    PairingMismatch,
    ProjectionStack,
    TiltforgeError,
    ValidationError,
    evenly_spaced_geometry,
)
from .fbp import FilterSpec, build_filter, reconstruct
from .mrcio import read_mrc, write_mrc
from .noise import (
    NoiseModel,
    average_training_stats,
    extract_noise_sigma,
    fit_sigma_poly,
    per_tilt_moments,
    simulate_baseline,
    simulate_noisy,
)
from .nst import NstConfig, build_faket, format_telemetry
from .radon import ProjectionConfig, bin2x, forward_project

EXIT_IO, EXIT_VALIDATION, EXIT_INTERNAL = 2, 3, 4
THREADS_ENV = "TILTFORGE_THREADS"
# parameters that never influence output bytes
_NOT_RECORDED = {"threads", "config", "func", "command"}


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(args, inputs, outputs) -> Path:
    params = {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_RECORDED}
    manifest = {
        "tool": "tiltforge",
        "version": __version__,
        "command": args.command,
        "parameters": params,
        "inputs": {str(p): sha256(p) for p in inputs},
        "outputs": {str(p): sha256(p) for p in outputs},
    }
    path = Path(str(outputs[0]) + ".manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _geometry(args, count):
    return evenly_spaced_geometry(args.min, args.max, count)


def _read_stack(path, args) -> ProjectionStack:
    data, _ = read_mrc(path)
    return ProjectionStack(data, _geometry(args, data.shape[0]))


def _need(args, *names):
    missing = [n for n in names if getattr(args, n, None) in (None, [], "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ValidationError(f"missing required option(s): {flags}")


def _distinct_outputs(inputs, outputs):
    resolved = [Path(p).resolve() for p in inputs]
    for out in outputs:
        if Path(out).resolve() in resolved:
            raise ValidationError(f"output {out} would overwrite an input")


def _print_stats(stack, out=sys.stdout):
    st = per_tilt_moments(stack)
    print("tilt\tangle\tmean\tstd", file=out)
    for i, (a, m, s) in enumerate(zip(stack.geometry.angles_deg, st.mean, st.std)):
        print(f"{i}\t{a:.2f}\t{m:.6g}\t{s:.6g}", file=out)


def cmd_project(args):
    _need(args, "input", "out")
    _distinct_outputs([args.input], [args.out])
    data, header = read_mrc(args.input)
    volume = DensityVolume(data, header.voxel_size_nm or 1.0)
    geometry = evenly_spaced_geometry(args.min, args.max, args.tilts)
    config = ProjectionConfig(negate=not args.no_negate, pad_value=args.pad_value)
    stack = forward_project(volume, geometry, config, threads=args.threads)
    write_mrc(args.out, stack.data, volume.voxel_size_nm, ispg=0)
    write_manifest(args, [args.input], [args.out])
    _print_stats(stack)
    return 0


def cmd_fit_noise(args):
    _need(args, "targets", "noiseless", "out")
    if len(args.targets) != len(args.noiseless):
        raise PairingMismatch(
            f"{len(args.targets)} target stacks but {len(args.noiseless)} noiseless stacks"
        )
    stats, sigmas, geometry = [], [], None
    for t_path, n_path in zip(args.targets, args.noiseless):
        target = _read_stack(t_path, args)
        clean = _read_stack(n_path, args)
        if target.shape != clean.shape:
            raise PairingMismatch(f"{t_path} has shape {target.shape}, {n_path} has {clean.shape}")
        if geometry is not None and target.geometry != geometry:
            raise PairingMismatch(f"{t_path} has a different tilt count than earlier stacks")
        geometry = target.geometry
        stats.append(per_tilt_moments(target))
        sigmas.append(extract_noise_sigma(target, clean))
    poly = fit_sigma_poly(geometry.angles_deg, sigmas)
    model = NoiseModel(
        geometry.angles_deg,
        average_training_stats(stats),
        poly,
        float(np.mean(sigmas)),
    )
    model.save(args.out)
    write_manifest(args, [*args.targets, *args.noiseless], [args.out])
    a, b, c = poly
    print(f"sigma(theta) = {a:.6g} theta^2 + {b:.6g} theta + {c:.6g}; global sigma {model.global_sigma:.6g}")
    return 0


def _load_net(args):
    if args.net:
        return featnet.load_weights(args.net)
    if args.random_net is not None:
        return featnet.init_random(seed=args.random_net)
    raise ValidationError("faket mode needs --net WEIGHTS or --random-net SEED")


def cmd_simulate(args):
    _need(args, "input", "model", "out", "seed")
    inputs = [args.input, args.model]
    noiseless = _read_stack(args.input, args)
    model = NoiseModel.load(args.model)
    if args.mode == "baseline":
        out = simulate_baseline(noiseless, model, args.seed, threads=args.threads)
    elif args.mode == "noisy":
        out = simulate_noisy(noiseless, model, args.fraction, args.seed, threads=args.threads)
    else:
        if not args.style:
            raise MissingStyle("faket mode needs --style STACK")
        style = _read_stack(args.style, args)
        net = _load_net(args)
        inputs.append(args.style)
        if args.net:
            inputs.append(args.net)
        config = NstConfig(
            alpha=args.alpha,
            beta=args.beta,
            learning_rate=args.learning_rate,
            iterations=args.iterations,
            content_noise_fraction=args.content_fraction,
            seed=args.seed,
        )
        out, history = build_faket(
            noiseless, style, model, net, config, threads=args.threads, return_history=True
        )
    outputs = [args.out]
    _distinct_outputs(inputs, outputs)
    write_mrc(args.out, out.data, ispg=0)
    if args.mode == "faket":
        telemetry = args.telemetry or str(args.out) + ".loss.tsv"
        Path(telemetry).write_text(format_telemetry(history))
        outputs.append(telemetry)
        first = [r.total for r in history if r.iteration == 0]
        last = [r.total for r in history if r.iteration == args.iterations]
        print(f"mean total loss {np.mean(first):.6g} -> {np.mean(last):.6g} over {len(first)} tilts")
    write_manifest(args, inputs, outputs)
    return 0


def _filter_spec(args, h, w) -> FilterSpec:
    spec = FilterSpec(
        gaussian_sigma_x=args.sigma_x,
        gaussian_sigma_y=args.sigma_y,
        crowther_fraction=args.crowther,
        radius_cutoff=args.radius,
        use_gaussian=not args.no_gaussian,
        use_ramp=not args.no_ramp,
        use_circle=not args.no_circle,
        crowther_mode=args.crowther_mode,
    )
    return spec.scaled_to(h, w, reference=args.reference_width)


def cmd_reconstruct(args):
    _need(args, "input", "out")
    _distinct_outputs([args.input], [args.out])
    stack = _read_stack(args.input, args)
    if args.bin2x:
        stack = bin2x(stack)
    _, H, W = stack.shape
    spec = _filter_spec(args, H, W)
    vol = reconstruct(stack, spec, depth=args.depth, pad_factor=args.pad_factor, threads=args.threads)
    write_mrc(args.out, vol.data)
    write_manifest(args, [args.input], [args.out])
    print(f"reconstructed volume {vol.shape[0]}x{vol.shape[1]}x{vol.shape[2]}")
    return 0


def to_bytes(image):
    """Min-max map a 2-D slice onto 0..255; constant slices become 128."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = float(img.min()), float(img.max())
    if hi == lo:
        return np.full(img.shape, 128, dtype=np.uint8), lo, hi
    scaled = np.rint((img - lo) / (hi - lo) * 255.0)
    return scaled.astype(np.uint8), lo, hi


def _save_png(path, image):
    from PIL import Image

    pixels, lo, hi = to_bytes(image)
    Image.fromarray(pixels, mode="L").save(path)
    return lo, hi


def cmd_export_png(args):
    _need(args, "input", "out")
    data, _ = read_mrc(args.input)
    if not 0 <= args.index < data.shape[0]:
        raise IndexOutOfRange(f"index {args.index} outside 0..{data.shape[0] - 1}")
    lo, hi = _save_png(args.out, data[args.index])
    write_manifest(args, [args.input], [args.out])
    print(f"min={lo:.6g} max={hi:.6g}")
    return 0


def cmd_dump_filter(args):
    _need(args, "out")
    spec = _filter_spec(args, args.height, args.width)
    filt = build_filter(args.height, args.width, spec)
    if str(args.out).endswith(".npy"):
        np.save(args.out, filt)
    else:
        _save_png(args.out, filt)
    write_manifest(args, [], [args.out])
    print(f"filter {args.height}x{args.width}: min={filt.min():.6g} max={filt.max():.6g}")
    return 0


def cmd_init_net(args):
    _need(args, "out")
    featnet.save_weights(featnet.init_random(seed=args.seed), args.out)
    write_manifest(args, [], [args.out])
    return 0


def _default_threads():
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _add_geometry(p, with_count=False):
    p.add_argument("--min", type=float, default=-60.0, help="first tilt angle (deg)")
    p.add_argument("--max", type=float, default=60.0, help="last tilt angle (deg)")
    if with_count:
        p.add_argument("--tilts", type=int, default=61, help="number of tilts")


def _add_filter(p):
    p.add_argument("--sigma-x", type=float, default=174.0)
    p.add_argument("--sigma-y", type=float, default=102.0)
    p.add_argument("--crowther", type=float, default=0.61, help="fraction of Nyquist")
    p.add_argument("--radius", type=float, default=256.0)
    p.add_argument("--reference-width", type=int, default=512,
                   help="grid size the pixel-valued filter parameters refer to")
    p.add_argument("--crowther-mode", choices=("flat", "zero"), default="flat")
    p.add_argument("--no-gaussian", action="store_true")
    p.add_argument("--no-ramp", action="store_true")
    p.add_argument("--no-circle", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(prog="tiltforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults")
    common.add_argument("--threads", type=int, default=_default_threads(),
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("project", parents=[common], help="forward-project a volume")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    _add_geometry(p, with_count=True)
    p.add_argument("--no-negate", action="store_true", help="keep dense matter bright")
    p.add_argument("--pad-value", type=float, default=0.0)
    p.set_defaults(func=cmd_project)
    subparsers["project"] = p

    p = sub.add_parser("fit-noise", parents=[common], help="fit a noise model from paired stacks")
    p.add_argument("--targets", nargs="+", default=[])
    p.add_argument("--noiseless", nargs="+", default=[])
    p.add_argument("--out")
    _add_geometry(p)
    p.set_defaults(func=cmd_fit_noise)
    subparsers["fit-noise"] = p

    p = sub.add_parser("simulate", parents=[common], help="simulate baseline/noisy/faket projections")
    p.add_argument("--mode", choices=("baseline", "noisy", "faket"), default="baseline")
    p.add_argument("--in", dest="input")
    p.add_argument("--model")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--fraction", type=float, default=1.0, help="noise fraction for noisy mode")
    p.add_argument("--style")
    p.add_argument("--net", help="feature-net weight file")
    p.add_argument("--random-net", type=int, help="use a randomly initialised net with this seed")
    p.add_argument("--iterations", type=int, default=1)
    p.add_argument("--learning-rate", type=float, default=0.05)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1000.0)
    p.add_argument("--content-fraction", type=float, default=0.25)
    p.add_argument("--telemetry", help="loss table path (default: <out>.loss.tsv)")
    _add_geometry(p)
    p.set_defaults(func=cmd_simulate)
    subparsers["simulate"] = p

    p = sub.add_parser("reconstruct", parents=[common], help="weighted filtered back-projection")
    p.add_argument("--in", dest="input")
    p.add_argument("--out")
    p.add_argument("--bin2x", action="store_true")
    p.add_argument("--depth", type=int, help="output depth (default: width)")
    p.add_argument("--pad-factor", type=int, default=2)
    _add_geometry(p)
    _add_filter(p)
    p.set_defaults(func=cmd_reconstruct)
    subparsers["reconstruct"] = p

    p = sub.add_parser("export-png", parents=[common], help="save one slice as 8-bit PNG")
    p.add_argument("--in", dest="input")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_png)
    subparsers["export-png"] = p

    p = sub.add_parser("dump-filter", parents=[common], help="write the reconstruction filter")
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--out")
    _add_filter(p)
    p.set_defaults(func=cmd_dump_filter)
    subparsers["dump-filter"] = p

    p = sub.add_parser("init-net", parents=[common], help="write a randomly initialised feature net")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_init_net)
    subparsers["init-net"] = p
    return parser, subparsers


def parse_args(argv):
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except OSError as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config {args.config} is not valid JSON: {exc}") from None
        sp = subparsers[args.command]
        config = {k.replace("-", "_"): v for k, v in config.items()}
        known = {a.dest for a in sp._actions}
        unknown = set(config) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        # explicit flags win over the config file
        sp.set_defaults(**config)
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        return args.func(args)
    except (OSError, FormatError) as exc:
        print(f"tiltforge: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValidationError, TiltforgeError, ValueError) as exc:
        print(f"tiltforge: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        print(f"tiltforge: internal error: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
