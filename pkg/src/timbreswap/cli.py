"""Command-line entry point: synth, train, edit, eval, demo.

Exit codes: 0 ok, 1 probe never changed (fallback=error), 2 config/usage error, 3 missing artifact, 4 training failure, 5 I/O error.
Failures print one line ``error: <category>: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .classifiers import TrainingFailure
from .config import ROOT_ENV, ConfigError, load_config
from .diffusion import TrainingError
from .nncore import CheckpointError, NonFiniteGradient
from .tone import FALLBACKS, STRATEGIES, EditRequest, NoChangeError

EXIT_OK, EXIT_NO_CHANGE, EXIT_CONFIG, EXIT_MISSING, EXIT_TRAINING, EXIT_IO = 0, 1, 2, 3, 4, 5


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="timbreswap", description=__doc__.split("\n")[0],
                                epilog=f"The artifact root can be overridden with ${ROOT_ENV}.")
    p.add_argument("--config", help="INI file with a [run] section (defaults used when omitted)")
    p.add_argument("--root", help="artifact root directory (overrides the config and the environment)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", help="generate the synthetic corpus")

    t = sub.add_parser("train", help="train models")
    t.add_argument("--stage", choices=pipeline.STAGES, default="all")

    e = sub.add_parser("edit", help="run one instrument edit and write WAVs, PNGs and a JSON record")
    e.add_argument("--seed", type=int, required=True)
    e.add_argument("--src", type=int, required=True, help="source instrument id")
    e.add_argument("--tgt", type=int, required=True, help="target instrument id")
    e.add_argument("--strategy", choices=STRATEGIES, default="diff_tone")
    e.add_argument("--fallback", choices=FALLBACKS, default=None, help="policy when the probe never changes")

    v = sub.add_parser("eval", help="run the evaluation matrix and the generation check")
    v.add_argument("--workers", type=int, default=1, help="worker processes for the edit matrix")

    sub.add_parser("demo", help="swap sweep over steps for the configured seeds and pair")
    return p


def _run(args) -> int:
    config = load_config(args.config, {"root": args.root} if args.root else None)
    if args.command == "synth":
        m = pipeline.synth(config)
        print(f"wrote {len(m.entries)} clips to {config.corpus_path} (config {config.hash})")
    elif args.command == "train":
        summary = pipeline.train(config, args.stage)
        print(json.dumps(dict(summary, config_hash=config.hash), sort_keys=True))
    elif args.command == "edit":
        if args.src == args.tgt:
            raise UsageError("--src and --tgt must differ")
        request = EditRequest(args.seed, args.src, args.tgt, config.w, args.strategy,
                              args.fallback or config.fallback, config.window, config.min_confidence,
                              config.eval_seed)
        out_dir, record = pipeline.run_edit(config, request)
        print(f"t_star={record['t_star']} status={record['status']} -> {out_dir}")
    elif args.command == "eval":
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        report, gen = pipeline.evaluate(config, args.workers)
        sys.stdout.write(report.to_csv())
        print(json.dumps(gen, sort_keys=True))
    elif args.command == "demo":
        summary = pipeline.run_demo(config)
        print(f"demo for seeds {[r['seed'] for r in summary['runs']]} -> {config.reports_path / 'demo'}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return _run(args)
    except Exception as exc:  # noqa: BLE001 - mapped to a category below, anything else re-raised
        category, code = _classify(exc)
        print(f"error: {category}: {str(exc).replace(chr(10), ' ')}", file=sys.stderr)
        return code


def _classify(exc: Exception) -> tuple[str, int]:
    if isinstance(exc, ConfigError):
        return "config", EXIT_CONFIG
    if isinstance(exc, pipeline.MissingArtifact):
        return "missing_artifact", EXIT_MISSING
    if isinstance(exc, NoChangeError):
        return "no_change", EXIT_NO_CHANGE
    if isinstance(exc, (TrainingFailure, TrainingError, NonFiniteGradient)):
        return "training_failure", EXIT_TRAINING
    if isinstance(exc, (OSError, CheckpointError)):
        return "io", EXIT_IO
    if isinstance(exc, (UsageError, ValueError)):
        return "usage", EXIT_CONFIG
    raise exc


if __name__ == "__main__":
    sys.exit(main())
