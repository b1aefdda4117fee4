#!/usr/bin/env python3
"""
Command-line entry point for the SGP registration toolkit.

Usage:
    python src/main.py [--debug|-d] <command> [options]

Commands:
    gen-data        generate a synthetic dataset directory
    bootstrap       FPFH + RANSAC labels for a dataset (no ground truth read)
    run             full teacher-student loop, writes a run directory
    register        register two PLY files, print the transform and inlier rate
    evaluate        registration recall of a checkpoint (or FPFH) on a manifest
    export-metrics  copy a run's metrics.csv to a chosen path

Exit status: 0 on success, 1 on usage errors, 2 on data errors.

Environment variables:
    SGP_DEBUG=1: Enable debug mode
"""

import argparse
import os
import sys
from dataclasses import replace
from typing import List, Optional

# Add src to path for imports
sys.path.insert(0, os.path.dirname(__file__))

from controllers.sgp_controller import SgpController
from models.dataset import RegistrationPair
from models.errors import GroundTruthAccessError
from models.sgp_config import TEACHERS
from services.checkpoint_storage import read_checkpoint
from services.config_loader import load_config
from services.csv_exporter import CSVExporter
from services.datagen import difficulty_preset, make_dataset
from services.dataset_io import load_dataset, load_pairs, write_dataset
from services.ply_io import read_ply
from services.run_directory import RunDirectory
from services.verifier import verify_labels
from utils.debug import configure_logging, logger

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class UsageError(Exception):
    """Raised by the argument parser instead of exiting."""


class CliParser(argparse.ArgumentParser):
    """ArgumentParser that reports usage errors with exit status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def _add_config_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', help="key = value configuration file")
    parser.add_argument('--seed', type=int, help="master seed (overrides the configuration)")
    parser.add_argument('--workers', type=int, help="parallel teacher workers")


def build_parser() -> CliParser:
    parser = CliParser(prog='sgp', description="Self-supervised point cloud registration toolkit")
    parser.add_argument('--debug', '-d', action='store_true', help="verbose logging")
    commands = parser.add_subparsers(dest='command', metavar='command', parser_class=CliParser)
    commands.required = True

    gen = commands.add_parser('gen-data', help="generate a synthetic dataset")
    gen.add_argument('--out', required=True, help="dataset directory")
    gen.add_argument('--n-train', type=int, default=200)
    gen.add_argument('--n-test', type=int, default=50)
    gen.add_argument('--n-validation', type=int, default=0)
    gen.add_argument('--preset', choices=('easy', 'default', 'hard'), default='default')
    gen.add_argument('--overlap', type=float, help="target overlap ratio")
    gen.add_argument('--noise', type=float, help="Gaussian noise sigma in meters")
    gen.add_argument('--points', type=int, help="points per scene")
    gen.add_argument('--seed', type=int, default=0)
    gen.add_argument('--workers', type=int, default=1)

    boot = commands.add_parser('bootstrap', help="bootstrap labels only")
    boot.add_argument('--data', required=True, help="dataset directory")
    boot.add_argument('--out', required=True, help="labels CSV path")
    boot.add_argument('--split', choices=('train', 'test'), default='train')
    _add_config_options(boot)

    run = commands.add_parser('run', help="run the teacher-student loop")
    run.add_argument('--data', required=True, help="dataset directory")
    run.add_argument('--out', required=True, help="run directory")
    run.add_argument('--iterations', type=int)
    run.add_argument('--teacher', choices=TEACHERS)
    run.add_argument('--retrain', action='store_true', help="train each round from fresh weights")
    run.add_argument('--no-verify', action='store_true', help="train on every label")
    run.add_argument('--exchange-splits', action='store_true', help="train on test, evaluate on train")
    _add_config_options(run)

    reg = commands.add_parser('register', help="register two PLY files")
    reg.add_argument('source', help="PLY of fragment A")
    reg.add_argument('target', help="PLY of fragment B")
    reg.add_argument('--model', help="student checkpoint (FPFH when omitted)")
    _add_config_options(reg)

    ev = commands.add_parser('evaluate', help="registration recall on a manifest")
    ev.add_argument('--manifest', required=True, help="manifest CSV with ground-truth columns")
    ev.add_argument('--model', help="student checkpoint (FPFH when omitted)")
    _add_config_options(ev)

    exp = commands.add_parser('export-metrics', help="export a run's metrics")
    exp.add_argument('run_dir', help="run directory")
    exp.add_argument('--out', help="destination CSV (default: the run's metrics.csv)")
    return parser


def _config(args, **overrides):
    return load_config(args.config, seed=args.seed, workers=args.workers, **overrides)


def cmd_gen_data(args) -> int:
    scene_spec, pair_spec = difficulty_preset(args.preset)
    if args.points is not None:
        scene_spec = replace(scene_spec, points_per_scene=args.points)
    if args.overlap is not None:
        pair_spec = replace(pair_spec, overlap=args.overlap)
    if args.noise is not None:
        pair_spec = replace(pair_spec, noise_sigma=args.noise)
    dataset = make_dataset(args.n_train, args.n_test, scene_spec, pair_spec, args.seed,
                           n_validation=args.n_validation, workers=args.workers)
    write_dataset(dataset, args.out)
    print(args.out)
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    config = _config(args)
    dataset = load_dataset(args.data)
    pairs = getattr(dataset, args.split)
    if not pairs:
        raise ValueError(f"Split '{args.split}' of {args.data} is empty")
    labels = SgpController(config).bootstrap(pairs)
    verify_labels(labels, config.eta_for(1), config.verify_label)
    out_dir = os.path.dirname(os.path.abspath(args.out))
    os.makedirs(out_dir, exist_ok=True)
    print(CSVExporter(out_dir).export_labels(labels, os.path.basename(args.out)))
    return EXIT_OK


def cmd_run(args) -> int:
    config = _config(args, iterations=args.iterations, teacher=args.teacher,
                     retrain=True if args.retrain else None,
                     verify_label=False if args.no_verify else None)
    dataset = load_dataset(args.data)
    if args.exchange_splits:
        dataset = dataset.exchanged()
    controller = SgpController(config, RunDirectory(args.out))
    result = controller.run_sgp(dataset)
    logger.info("Finished %d iterations, returned model of iteration %d",
                len(result.metrics), result.best_iteration)
    print(args.out)
    return EXIT_OK


def _load_model(path: Optional[str]):
    return read_checkpoint(path) if path else None


def cmd_register(args) -> int:
    config = _config(args)
    pair = RegistrationPair('register', read_ply(args.source), read_ply(args.target))
    label = SgpController(config).register(pair, _load_model(args.model))
    if not label.has_model:
        raise ValueError("No transform could be estimated for this pair")
    print(' '.join(repr(v) for v in label.transform.to_row()))
    print(repr(label.inlier_rate))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _config(args)
    pairs = load_pairs(args.manifest)
    missing = [p.pair_id for p in pairs if not p.has_ground_truth]
    if missing:
        raise ValueError(f"Manifest {args.manifest} lacks ground truth for {len(missing)} pairs")
    value = SgpController(config).evaluate(_load_model(args.model), pairs)
    print(repr(value))
    return EXIT_OK


def cmd_export_metrics(args) -> int:
    run_dir = RunDirectory(args.run_dir)
    metrics = run_dir.metrics()
    target = os.path.abspath(args.out) if args.out else run_dir.file('metrics.csv')
    print(CSVExporter(os.path.dirname(target)).export_metrics(metrics, os.path.basename(target)))
    return EXIT_OK


COMMANDS = {
    'gen-data': cmd_gen_data,
    'bootstrap': cmd_bootstrap,
    'run': cmd_run,
    'register': cmd_register,
    'evaluate': cmd_evaluate,
    'export-metrics': cmd_export_metrics,
}


def cli(argv: Optional[List[str]] = None) -> int:
    """
    Run one command.

    Args:
        argv: Arguments without the program name (default: sys.argv[1:])

    Returns:
        Exit status (0 success, 1 usage error, 2 data error)
    """
    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    configure_logging(debug=True if args.debug else None)
    logger.debug("Command %s with %s", args.command,
                 ", ".join(f"{k}={v!r}" for k, v in sorted(vars(args).items())))
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError, GroundTruthAccessError) as e:
        logger.debug("%s failed with %s", args.command, type(e).__name__)
        # ConfigError, ManifestError and PlyParseError are ValueErrors
        sys.stderr.write(f"ERROR: {e}\n")
        return EXIT_DATA


def main():
    """Main application entry point."""
    try:
        sys.exit(cli(sys.argv[1:]))
    except KeyboardInterrupt:
        logger.info("Interrupted by user")
        sys.exit(130)


if __name__ == "__main__":
    main()
