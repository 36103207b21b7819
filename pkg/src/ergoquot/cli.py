"""Command-line entry point.

Exit codes: 0 success, 2 config error, 3 stage failure, 4 archive corruption.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .archive import Archive, ArchiveError, CorruptArchive, verify_archive
from .clustering import ClusteringError
from .config import ConfigError, load_config
from .diffmaps import DiffusionError
from .dynamics import DynamicsError
from .eigen import EigenError
from .integrator import IntegrationError
from .metric import MetricError
from .pipeline import STAGES, StageError, export_pointcloud, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_CORRUPT = 4

_STAGE_COMMANDS = {
    "run": "cluster",
    "average": "average",
    "distances": "distances",
    "embed": "embed",
    "cluster": "cluster",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ergoquot", description="Ergodic-quotient coherent-structure pipeline")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, until in _STAGE_COMMANDS.items():
        helptext = "run the full pipeline" if name == "run" else f"run stages up to {until}"
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--archive", help="archive directory (default: config output)")
        p.add_argument("--drop-unconverged", action="store_true", help="exclude samples that hit T_max")
        p.add_argument("--force", action="store_true", help=f"recompute the {until} stage even if current")
        p.add_argument("--threads", type=int, default=None, help="worker cap (overrides ERGOQUOT_THREADS)")
        p.set_defaults(until=until)

    p = sub.add_parser("export", help="write a labelled point cloud as delimited text")
    p.add_argument("--config", help="unused; accepted for symmetry with other commands")
    p.add_argument("--archive", required=True)
    p.add_argument("--what", default="labels", help="'labels' or a diffusion coordinate index")
    p.add_argument("--slice", default=None, help="axis:lo:hi window on the initial conditions")
    p.add_argument("--out", required=True)
    p.add_argument("--delimiter", default=",")

    p = sub.add_parser("verify", help="check archive hashes and invariants")
    p.add_argument("--config", help="unused; accepted for symmetry with other commands")
    p.add_argument("--archive", required=True)
    return parser


def _run_stages(args) -> int:
    cfg = load_config(args.config)
    path = args.archive or cfg.output
    if path is None:
        raise ConfigError("no --archive given and the config has no output")
    try:
        Archive.open(path)
        existing = True
    except ArchiveError:
        existing = False
    if existing:
        issues = verify_archive(path)
        if issues:
            for line in issues:
                print(f"corrupt: {line}", file=sys.stderr)
            return EXIT_CORRUPT
    force = (args.until,) if args.force else ()
    arc = run_pipeline(
        cfg,
        archive=path,
        until=args.until,
        drop_unconverged=args.drop_unconverged,
        force=force,
        workers=args.threads,
    )
    done = [s for s in STAGES if s in arc.manifest["stages"]]
    print(f"{arc.path}: completed {', '.join(done)}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command in _STAGE_COMMANDS:
            return _run_stages(args)
        if args.command == "export":
            what = args.what if args.what == "labels" else int(args.what)
            n = export_pointcloud(args.archive, args.out, what=what, slice_spec=args.slice, delimiter=args.delimiter)
            print(f"wrote {n} rows to {args.out}")
            return EXIT_OK
        if args.command == "verify":
            issues = verify_archive(args.archive)
            for line in issues:
                print(line)
            if issues:
                return EXIT_CORRUPT
            print("ok")
            return EXIT_OK
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorruptArchive as exc:
        print(f"corrupt archive: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except ValueError as exc:
        if args.command == "export" and "invalid literal" in str(exc):
            print(f"config error: bad --what value {args.what!r}", file=sys.stderr)
            return EXIT_CONFIG
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (
        StageError,
        ArchiveError,
        DynamicsError,
        IntegrationError,
        MetricError,
        DiffusionError,
        ClusteringError,
        EigenError,
    ) as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
