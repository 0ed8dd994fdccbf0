#!/usr/bin/env python3
"""Command Line Interface for planar-doa"""
import argparse
import csv
import json
import logging
import math
import sys
from contextlib import contextmanager
from typing import List, Optional

from core.config import ConfigError, RunConfig, load_geometry
from core.kde import KdeError
from core.processor import RECORD_FIELDS, process_recording, write_records
from core.sim import RECORD_COLUMNS, SimConfig, SimulationError, build_summary, records_to_frame, run_simulation
from core.triangulation import Bearing, Node, ottoy_resolve, triangulate
from core.utils import DoaError

logger = logging.getLogger("cli")

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_NOT_FOUND = 3
EXIT_MALFORMED = 4
EXIT_CHANNEL_MISMATCH = 5

EXIT_CODES = {
    "config_not_found": EXIT_NOT_FOUND,
    "invalid_config": EXIT_MALFORMED,
    "malformed_wav": EXIT_MALFORMED,
    "malformed_csv": EXIT_MALFORMED,
    "channel_mismatch": EXIT_CHANNEL_MISMATCH,
}


def configure_logging(verbose: bool):
    """Logs go to stderr so stdout carries only records"""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )


@contextmanager
def open_output(path: Optional[str]):
    """Yield the output file, or stdout when no path is given"""
    if not path or path == "-":
        yield sys.stdout
        return
    with open(path, "w", encoding="utf-8", newline="") as f:
        yield f


def _float(row, key: str, path: str, line: int) -> float:
    try:
        return float(row[key])
    except (KeyError, TypeError, ValueError):
        raise ConfigError(f"{path}:{line}: missing or non-numeric {key!r}",
                          error_type="malformed_csv", details={"path": path, "line": line})


def read_bearings(file_path: str) -> List[Bearing]:
    """Read position_x, position_y and angle_degrees (or phi_hat_deg) rows

    Rows an ``estimate`` run marked as skipped are ignored.
    """
    bearings = []
    with open(file_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        angle_key = "angle_degrees" if "angle_degrees" in (reader.fieldnames or []) else "phi_hat_deg"
        for line, row in enumerate(reader, 2):
            if row.get("status", "ok") not in ("ok", ""):
                continue
            bearings.append(Bearing(
                (_float(row, "position_x", file_path, line), _float(row, "position_y", file_path, line)),
                math.radians(_float(row, angle_key, file_path, line)),
            ))
    return bearings


def read_nodes(file_path: str) -> List[Node]:
    """Read position_x, position_y, phi_prime_deg, phi_double_prime_deg rows"""
    nodes = []
    with open(file_path, "r", encoding="utf-8", newline="") as f:
        for line, row in enumerate(csv.DictReader(f), 2):
            nodes.append(Node(
                (_float(row, "position_x", file_path, line), _float(row, "position_y", file_path, line)),
                math.radians(_float(row, "phi_prime_deg", file_path, line)),
                math.radians(_float(row, "phi_double_prime_deg", file_path, line)),
            ))
    return nodes


def cmd_estimate(args) -> int:
    """Per-frame DOA records for one multichannel WAV file"""
    try:
        config = RunConfig.from_args(args)
    except ConfigError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    geometry = config.load_geometry()
    records = process_recording(args.wav, geometry, config)
    position = tuple(args.array_position) if args.array_position else None
    fields = RECORD_FIELDS + (["position_x", "position_y"] if position else [])

    with open_output(args.output) as stream:
        write_records((r.to_row(position) for r in records), stream, config.output_format, fields)

    skipped = sum(r.estimate is None for r in records)
    print(f"Processed {len(records)} frames ({skipped} skipped)", file=sys.stderr)
    return EXIT_OK


def cmd_simulate(args) -> int:
    """Monte-Carlo records plus an optional JSON summary"""
    geometry = load_geometry(args.geometry) if args.geometry else RunConfig().load_geometry()
    try:
        config = SimConfig(
            geometry=geometry,
            iterations=args.iterations,
            r_min=args.r_min,
            r_max=args.r_max,
            sigma_max=math.radians(args.sigma_max),
            kappa_range=(args.kappa_min, args.kappa_max),
            bins=args.bins,
            rng_seed=args.seed,
            workers=args.workers,
            prune=not args.exhaustive,
        )
    except (SimulationError, KdeError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_USAGE

    def progress(done: int, total: int):
        print(f"  [{done}/{total}] iterations", file=sys.stderr)

    records = run_simulation(config, progress if args.verbose else None)
    frame = records_to_frame(records)
    with open_output(args.output) as stream:
        write_records(frame.to_dict(orient="records"), stream, args.format, RECORD_COLUMNS)

    if args.summary:
        summary = build_summary(records, config)
        with open_output(args.summary) as stream:
            json.dump(summary, stream, indent=2, sort_keys=True)
            stream.write("\n")

    failed = int((frame["status"] != "ok").sum())
    print(f"Simulation complete: {len(records)} iterations, {failed} failed", file=sys.stderr)
    return EXIT_OK


def cmd_triangulate(args) -> int:
    """Source position from a bearing CSV (or node CSV with --ambiguous)"""
    if args.ambiguous:
        result = ottoy_resolve(read_nodes(args.bearings), workers=args.workers, method=args.method)
        row = {**result.location.to_dict(), "mask": result.mask,
               "error_deg": math.degrees(result.error)}
    else:
        row = triangulate(read_bearings(args.bearings), method=args.method).to_dict()

    with open_output(args.output) as stream:
        write_records([row], stream, args.format)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--geometry', help='Array geometry YAML (default: config/circular6.yaml)')
    common.add_argument('-o', '--output', help='Output file (default: stdout)')
    common.add_argument('--format', choices=['csv', 'json-lines'], default='csv',
                        help='Record format (default: csv)')
    common.add_argument('--workers', type=int, default=4, help='Worker threads, or processes for simulate (default: 4)')
    common.add_argument('--verbose', action='store_true', help='Enable debug logging')

    parser = argparse.ArgumentParser(
        description='planar-doa: unambiguous direction of arrival from planar microphone arrays'
    )
    sub = parser.add_subparsers(dest='command', required=True)

    estimate = sub.add_parser('estimate', parents=[common], help='Per-frame DOA of a WAV file')
    estimate.add_argument('wav', help='Multichannel PCM WAV, one channel per microphone')
    estimate.add_argument('--kappa', type=float, default=10.0, help='Kernel concentration (default: 10)')
    estimate.add_argument('--bins', type=int, default=512, help='Histogram bins (default: 512)')
    estimate.add_argument('--frame-len', type=float, default=1.0, help='Frame length, seconds (default: 1.0)')
    estimate.add_argument('--hop', type=float, default=0.2, help='Frame hop, seconds (default: 0.2)')
    estimate.add_argument('--speed-of-sound', type=float, help='m/s (default: geometry file, else 343)')
    estimate.add_argument('--weighting', choices=['none', 'phat'], default='none')
    estimate.add_argument('--window', choices=['rectangular', 'hann'], default='rectangular')
    estimate.add_argument('--orientation-offset', type=float,
                          help='Degrees added to every estimate (default: geometry file, else 0)')
    estimate.add_argument('--max-pairs', type=int, default=24, help='Largest accepted pair count')
    estimate.add_argument('--no-refine', action='store_true',
                          help='Use the histogram mode without optimizer refinement')
    estimate.add_argument('--array-position', type=float, nargs=2, metavar=('X', 'Y'),
                          help='Array position in meters, added to each record for triangulate')
    estimate.set_defaults(func=cmd_estimate)

    simulate = sub.add_parser('simulate', parents=[common], help='Monte-Carlo resolver study')
    simulate.add_argument('--iterations', type=int, default=10000, help='Iterations (default: 10000)')
    simulate.add_argument('--seed', type=int, default=0, help='RNG seed (default: 0)')
    simulate.add_argument('--bins', type=int, default=512, help='Histogram bins (default: 512)')
    simulate.add_argument('--r-min', type=float, default=10.0, help='Annulus inner radius, m')
    simulate.add_argument('--r-max', type=float, default=1000.0, help='Annulus outer radius, m')
    simulate.add_argument('--sigma-max', type=float, default=45.0, help='Noise std-dev bound, degrees')
    simulate.add_argument('--kappa-min', type=float, default=0.1)
    simulate.add_argument('--kappa-max', type=float, default=100.0)
    simulate.add_argument('--exhaustive', action='store_true',
                          help='Score every interpretation instead of pruning')
    simulate.add_argument('--summary', help='Write a JSON summary to this file ("-" for stdout)')
    simulate.set_defaults(func=cmd_simulate)

    tri = sub.add_parser('triangulate', parents=[common], help='Source position from bearings')
    tri.add_argument('bearings', help='CSV with position_x, position_y, angle_degrees')
    tri.add_argument('--method', choices=['sincos', 'tan'], default='sincos')
    tri.add_argument('--ambiguous', action='store_true',
                     help='Rows carry phi_prime_deg, phi_double_prime_deg; resolve by triangulation')
    tri.set_defaults(func=cmd_triangulate)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI function"""
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose)

    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(f"Error: {e.filename or e} not found!", file=sys.stderr)
        return EXIT_NOT_FOUND
    except DoaError as e:
        print(f"Error: {e}", file=sys.stderr)
        if args.verbose:
            logger.exception("Command failed", extra={"error_type": e.error_type})
        return EXIT_CODES.get(e.error_type, EXIT_FAILURE)


if __name__ == "__main__":
    sys.exit(main())
