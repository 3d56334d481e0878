"""
Netpbm image I/O, JSON reports, and the command line.

Usage examples:
  python cli_io.py segment --input img.ppm --labels 8 --rg-steps 8 --seed 1 \
      --out-labels seg.pgm --out-color seg.ppm --out-report run.json
  python cli_io.py rg-flow --q 8 --inverse 2.5288 --steps 8
  python cli_io.py synth --width 64 --height 64 --labels 2 --alpha 2.5 --seed 3 \
      --sweeps 20 --out-image syn.ppm --out-truth truth.pgm --out-params syn.json
  python cli_io.py bench --input img.ppm --labels 8 --rg-steps 0,2,4 --out-report bench.json
  python cli_io.py history --db rsrg_runs.db

Exit codes: 0 success, 2 usage error, 1 runtime or format error.
"""
import argparse
import json
import sys
import time
from dataclasses import replace
from typing import List, Optional, Tuple

import numpy as np

import runlog
from errors import FormatError, RsrgError, UsageError
from grid import ColorImage, LabelField, Torus
from pipeline import bench, colorize, label_accuracy, segment
from rgflow import forward_chain, inverse_chain
from settings import Settings, load_config
from synth import default_palette, isotropic_model, sample_image, sample_potts

WHITESPACE = b' \t\n\r\v\f'


# --- Netpbm ---
def _parse_header(data: bytes, magic: bytes) -> Tuple[Tuple[int, int, int], int]:
    """
    Parse '<magic> width height maxval' with '#' comments allowed between
    tokens. Returns the three numbers and the offset of the first raster byte.
    """
    if len(data) < 2:
        raise FormatError("file too short for a netpbm header", 0)
    if data[:2] != magic:
        found = data[:2].decode('latin-1')
        raise FormatError(f"expected magic {magic.decode()}, found {found!r} "
                          f"(only binary {magic.decode()} is supported)", 0)
    pos = 2
    values = []
    while len(values) < 3:
        if pos >= len(data):
            raise FormatError("header ends before width, height and maxval", pos)
        byte = data[pos:pos + 1]
        if byte in WHITESPACE:
            pos += 1
            continue
        if byte == b'#':
            end = data.find(b'\n', pos)
            pos = len(data) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(data) and data[pos:pos + 1] not in WHITESPACE and data[pos:pos + 1] != b'#':
            pos += 1
        token = data[start:pos]
        if not token.isdigit():
            raise FormatError(f"bad header field {token[:16]!r}", start)
        values.append(int(token))
    # exactly one whitespace byte separates maxval from the raster
    if pos >= len(data) or data[pos:pos + 1] not in WHITESPACE:
        raise FormatError("missing whitespace after maxval", pos)
    return tuple(values), pos + 1


def read_ppm_array(path: str) -> np.ndarray:
    """Binary P6 with maxval 255 -> float array (H, W, 3) with values v / 255"""
    with open(path, 'rb') as f:
        data = f.read()
    (width, height, maxval), offset = _parse_header(data, b'P6')
    if width < 1 or height < 1:
        raise FormatError(f"bad image size {width}x{height}", offset)
    if maxval != 255:
        raise FormatError(f"maxval must be 255, got {maxval}", offset)
    needed = width * height * 3
    if len(data) - offset < needed:
        raise FormatError(f"truncated pixel data: need {needed} bytes, "
                          f"have {len(data) - offset}", len(data))
    raster = np.frombuffer(data, dtype=np.uint8, count=needed, offset=offset)
    return raster.reshape(height, width, 3) / 255.0


def read_ppm(path: str) -> ColorImage:
    return ColorImage.from_array(read_ppm_array(path))


def _to_bytes(pixels: np.ndarray) -> np.ndarray:
    return np.rint(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_ppm(img: ColorImage, path: str):
    """P6, intensities clamped to [0, 1] and rounded to 8 bits"""
    header = f"P6\n{img.torus.width} {img.torus.height}\n255\n".encode('ascii')
    with open(path, 'wb') as f:
        f.write(header)
        f.write(_to_bytes(img.pixels).tobytes())


def write_pgm_labels(labels: LabelField, path: str):
    """P5 holding the raw label index of each site"""
    if labels.q > 256:
        raise UsageError(f"PGM stores at most 256 labels, got q={labels.q}")
    header = f"P5\n{labels.torus.width} {labels.torus.height}\n255\n".encode('ascii')
    with open(path, 'wb') as f:
        f.write(header)
        f.write(labels.labels.astype(np.uint8).tobytes())


def read_pgm_labels(path: str, q: Optional[int] = None) -> LabelField:
    """P5 label map; q defaults to the largest label + 1 (at least 2)"""
    with open(path, 'rb') as f:
        data = f.read()
    (width, height, maxval), offset = _parse_header(data, b'P5')
    if not 0 < maxval <= 255:
        raise FormatError(f"label maps need maxval <= 255, got {maxval}", offset)
    needed = width * height
    if len(data) - offset < needed:
        raise FormatError(f"truncated label data: need {needed} bytes, "
                          f"have {len(data) - offset}", len(data))
    labels = np.frombuffer(data, dtype=np.uint8, count=needed, offset=offset)
    labels = labels.reshape(height, width).astype(np.int64)
    if q is None:
        q = max(2, int(labels.max()) + 1)
    return LabelField(Torus(width, height), labels, q)


# --- JSON ---
def write_report(obj: dict, path: str):
    """Floats are written with the shortest repr that round-trips exactly"""
    with open(path, 'w') as f:
        json.dump(obj, f, indent=2, allow_nan=False)
        f.write('\n')


def read_report(path: str) -> dict:
    with open(path, 'r') as f:
        return json.load(f)


# --- Commands ---
def _settings_with_flags(settings: Settings, args) -> Settings:
    overrides = {
        key: getattr(args, key)
        for key in ('tolerance', 'max_iters', 'damping')
        if getattr(args, key, None) is not None
    }
    if not overrides:
        return settings
    return replace(settings, lbp=replace(settings.lbp, **overrides))


def _check_even(R: int):
    if R < 0 or R % 2:
        raise UsageError(f"--rg-steps must be an even non-negative integer "
                         f"(one stride-2 decimation per two RG steps), got {R}")


def _log(args, message: str):
    if not args.quiet:
        print(message, file=sys.stderr)


def cmd_segment(args, settings: Settings) -> int:
    _check_even(args.rg_steps)
    settings = _settings_with_flags(settings, args)
    img = read_ppm(args.input)
    truth = read_pgm_labels(args.truth, args.labels) if args.truth else None

    run_id = None
    if args.db:
        runlog.init_database(args.db)
        run_id = runlog.create_run(args.db, 'segment', args.input, args.labels, args.rg_steps, args.seed)

    start = time.perf_counter()
    try:
        labels, report = segment(img, args.labels, args.rg_steps, args.seed, settings,
                                 verbose=not args.quiet)
        if truth is not None:
            report.accuracy = label_accuracy(labels, truth)
            _log(args, f"[segment] accuracy vs truth: {report.accuracy:.4f}")
        write_pgm_labels(labels, args.out_labels)
        write_ppm(colorize(labels, report.model), args.out_color)
        write_report(report.to_dict(), args.out_report)
    except Exception as e:
        if run_id is not None:
            runlog.finish_run(args.db, run_id, 'error', message=str(e))
        raise

    if run_id is not None:
        runlog.finish_run(args.db, run_id, 'finished', alpha_R=report.alpha_R, alpha_0=report.alpha_0,
                          estimate_ms=report.timings_ms['estimate'],
                          total_ms=(time.perf_counter() - start) * 1000.0)
    _log(args, f"[segment] alpha^({args.rg_steps})={report.alpha_R:.4f} "
               f"alpha^(0)={report.alpha_0:.4f}; wrote {args.out_labels}, {args.out_color}, "
               f"{args.out_report}")
    return 0


def cmd_rg_flow(args, settings: Settings) -> int:
    if args.forward is not None:
        rows = forward_chain(args.forward, args.q, args.steps).rows()
    else:
        rows = inverse_chain(args.inverse, args.q, args.steps).rows(descending=True)
    for r, alpha in rows:
        print(f"{r}\t{alpha:.{args.precision}f}")
    return 0


def cmd_synth(args, settings: Settings) -> int:
    sigma = args.sigma if args.sigma is not None else settings.synth.sigma
    sweeps = args.sweeps if args.sweeps is not None else settings.synth.sweeps
    torus = Torus(args.width, args.height)
    model = isotropic_model(default_palette(args.labels), sigma)

    truth = sample_potts(torus, args.alpha, args.labels, args.seed, sweeps)
    img = sample_image(truth, model, args.seed + 1)

    write_ppm(img, args.out_image)
    write_pgm_labels(truth, args.out_truth)
    write_report({
        'width': args.width,
        'height': args.height,
        'q': args.labels,
        'alpha': args.alpha,
        'seed': args.seed,
        'image_seed': args.seed + 1,
        'sweeps': sweeps,
        'sigma': sigma,
        'generator': 'numpy PCG64',
        'model': model.to_dict(),
    }, args.out_params)
    _log(args, f"[synth] {args.width}x{args.height} q={args.labels} alpha={args.alpha}: "
               f"wrote {args.out_image}, {args.out_truth}, {args.out_params}")
    return 0


def _parse_steps(text: str) -> List[int]:
    try:
        steps = [int(s) for s in text.split(',') if s.strip()]
    except ValueError:
        raise UsageError(f"--rg-steps must be a comma-separated list of integers, got {text!r}")
    if not steps:
        raise UsageError("--rg-steps needs at least one value")
    for R in steps:
        _check_even(R)
    return steps


def cmd_bench(args, settings: Settings) -> int:
    steps = _parse_steps(args.rg_steps)
    settings = _settings_with_flags(settings, args)
    img = read_ppm(args.input)

    run_id = None
    if args.db:
        runlog.init_database(args.db)
        run_id = runlog.create_run(args.db, 'bench', args.input, args.labels, max(steps), args.seed)
    start = time.perf_counter()
    try:
        result = bench(img, args.labels, steps, args.seed, settings, verbose=not args.quiet)
        result['input'] = args.input
        write_report(result, args.out_report)
    except Exception as e:
        if run_id is not None:
            runlog.finish_run(args.db, run_id, 'error', message=str(e))
        raise

    if run_id is not None:
        last = result['runs'][-1]
        runlog.finish_run(args.db, run_id, 'finished', alpha_R=last['alpha_R'], alpha_0=last['alpha_0'],
                          estimate_ms=last['timings_ms']['estimate'],
                          total_ms=(time.perf_counter() - start) * 1000.0)
    for run in result['runs']:
        _log(args, f"[bench] R={run['R']}: estimate {run['timings_ms']['estimate']:.1f} ms, "
                   f"speedup {result['estimate_speedup'][str(run['R'])]:.2f}x")
    return 0


def cmd_history(args, settings: Settings) -> int:
    db_path = args.db or settings.runlog.db_path
    runlog.init_database(db_path)
    for row in runlog.get_runs(db_path, args.limit):
        print('\t'.join('' if row[k] is None else str(row[k]) for k in (
            'id', 'command', 'status', 'input', 'q', 'R', 'seed', 'alpha_R', 'alpha_0', 'estimate_ms')))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Bayesian color image segmentation with renormalization-group accelerated "
                    "hyperparameter estimation.")
    parser.add_argument('--config', type=str, default=None,
                        help="YAML config file (default: config.yml if present)")
    parser.add_argument('--quiet', action='store_true', help="No progress output on stderr")
    sub = parser.add_subparsers(dest='command', required=True)

    def lbp_flags(p):
        p.add_argument('--tolerance', type=float, default=None, help="LBP message tolerance")
        p.add_argument('--max-iters', dest='max_iters', type=int, default=None, help="LBP iteration cap")
        p.add_argument('--damping', type=float, default=None, help="LBP damping in [0, 1)")

    p = sub.add_parser('segment', help="Segment one PPM image")
    p.add_argument('--input', required=True)
    p.add_argument('--labels', type=int, required=True, help="Number of labels q")
    p.add_argument('--rg-steps', dest='rg_steps', type=int, required=True, help="Even number R of RG steps")
    p.add_argument('--seed', type=int, default=0)
    lbp_flags(p)
    p.add_argument('--out-labels', dest='out_labels', required=True)
    p.add_argument('--out-color', dest='out_color', required=True)
    p.add_argument('--out-report', dest='out_report', required=True)
    p.add_argument('--truth', default=None, help="Ground-truth PGM; adds accuracy to the report")
    p.add_argument('--db', default=None, help="Record the run in this SQLite ledger")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser('rg-flow', help="Print a forward or inverse coupling trajectory")
    p.add_argument('--q', type=int, required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument('--forward', type=float, help="Start from alpha^(0) and apply R steps")
    group.add_argument('--inverse', type=float, help="Start from alpha^(R) and invert R steps")
    p.add_argument('--steps', type=int, required=True)
    p.add_argument('--precision', type=int, default=4, help="Decimals printed (default: 4)")
    p.set_defaults(func=cmd_rg_flow)

    p = sub.add_parser('synth', help="Sample a Potts labeling and a Gaussian color image")
    p.add_argument('--width', type=int, required=True)
    p.add_argument('--height', type=int, required=True)
    p.add_argument('--labels', type=int, required=True)
    p.add_argument('--alpha', type=float, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--sweeps', type=int, default=None)
    p.add_argument('--sigma', type=float, default=None, help="Per-channel noise std (default from config)")
    p.add_argument('--out-image', dest='out_image', required=True)
    p.add_argument('--out-truth', dest='out_truth', required=True)
    p.add_argument('--out-params', dest='out_params', required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser('bench', help="Time segment for several R on one image")
    p.add_argument('--input', required=True)
    p.add_argument('--labels', type=int, required=True)
    p.add_argument('--rg-steps', dest='rg_steps', type=str, required=True, help="Comma-separated, e.g. 0,2,4")
    p.add_argument('--seed', type=int, default=0)
    lbp_flags(p)
    p.add_argument('--out-report', dest='out_report', required=True)
    p.add_argument('--db', default=None)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser('history', help="List recorded runs")
    p.add_argument('--db', default=None, help="Ledger path (default from config)")
    p.add_argument('--limit', type=int, default=20)
    p.set_defaults(func=cmd_history)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        # argparse exits 2 on bad usage, 0 on --help
        return int(e.code or 0)

    try:
        settings = load_config(args.config)
        return args.func(args, settings)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (RsrgError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


cli_main = main


if __name__ == '__main__':
    sys.exit(main())
