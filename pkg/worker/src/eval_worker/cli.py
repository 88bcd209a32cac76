"""Command-line entry points for the evaluation worker.

Subcommands:
  serve     connect to an engine and evaluate jobs until stopped
  prepare   train (or load) the cached teacher bundle and report its accuracy
  evaluate  run one architecture record through the full pipeline locally

Exit codes: 0 success; 1 evaluation or connection failure; 2 bad usage or
unreadable inputs.  Set EVAL_WORKER_LOG=DEBUG|INFO|WARNING|ERROR for log
verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import socket
import sys
from dataclasses import replace

from .attack import AttackConfig
from .distillation import DistillConfig
from .evaluation import EvalContext, evaluate_record
from .service import WorkerService
from .text_data import DatasetError

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def _context_from_args(args) -> EvalContext:
    distill_cfg = DistillConfig()
    if getattr(args, "epochs", None) is not None:
        distill_cfg = replace(distill_cfg, epochs=args.epochs)
    if getattr(args, "batch_size", None) is not None:
        distill_cfg = replace(distill_cfg, batch_size=args.batch_size)
    attack_cfg = AttackConfig(seed=args.seed)
    if getattr(args, "samples", None) is not None:
        attack_cfg = replace(attack_cfg, robustness_samples=args.samples)
    return EvalContext.create(
        data_dir=args.data,
        cache_dir=args.cache,
        seed=args.seed,
        device=args.device,
        distill_cfg=distill_cfg,
        attack_cfg=attack_cfg,
    )


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port_text = text.rpartition(":")
    if not sep or not host:
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    try:
        port = int(port_text)
    except ValueError:
        raise ValueError(f"port must be an integer, got {port_text!r}") from None
    if not 0 < port < 65536:
        raise ValueError(f"port out of range: {port}")
    return host, port


def cmd_prepare(args) -> int:
    ctx = _context_from_args(args)
    print(f"teacher train accuracy: {ctx.bundle.train_accuracy_pct:.1f}%")
    print(f"teacher eval accuracy:  {ctx.bundle.eval_accuracy_pct:.1f}%")
    print(f"teacher layers: {ctx.bundle.num_layers}, classes: {ctx.bundle.num_classes}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    try:
        with open(args.arch, encoding="utf-8") as handle:
            record = json.load(handle)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read architecture record: {exc}", file=sys.stderr)
        return EXIT_USAGE
    ctx = _context_from_args(args)
    result = evaluate_record(ctx, record)
    print(json.dumps(result, indent=2, sort_keys=True))
    return EXIT_OK if result["status"] == "ok" else EXIT_FAILURE


def cmd_serve(args) -> int:
    try:
        host, port = _parse_endpoint(args.engine)
    except ValueError as exc:
        print(f"bad --engine value: {exc}", file=sys.stderr)
        return EXIT_USAGE
    worker_id = args.worker_id or f"worker-{socket.gethostname()}-{os.getpid()}"
    ctx = _context_from_args(args)
    service = WorkerService(
        host,
        port,
        worker_id,
        evaluator=lambda arch, eval_config: evaluate_record(ctx, arch, eval_config),
        capabilities={"evaluator": "distill-attack", "dataset": ctx.distill_cfg.dataset},
    )
    try:
        return service.run()
    except KeyboardInterrupt:
        service.stop()
        return EXIT_OK


def _add_context_flags(parser: argparse.ArgumentParser, with_job_flags: bool) -> None:
    parser.add_argument("--data", metavar="DIR", default=None, help="dataset directory (default: bundled corpus)")
    parser.add_argument("--cache", metavar="DIR", default=None, help="teacher-bundle cache directory")
    parser.add_argument("--seed", type=int, default=0, help="base random seed (default: %(default)s)")
    parser.add_argument("--device", default="cpu", help="torch device (default: %(default)s)")
    if with_job_flags:
        parser.add_argument("--epochs", type=int, default=None, help="distillation epochs override")
        parser.add_argument("--batch-size", type=int, default=None, help="distillation batch size override")
        parser.add_argument("--samples", type=int, default=None, help="robustness sample count override")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="eval-worker",
        description="distillation + adversarial-attack evaluation worker",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="connect to an engine and evaluate jobs")
    p.add_argument("--engine", required=True, metavar="HOST:PORT", help="engine endpoint")
    p.add_argument("--worker-id", default=None, help="identity announced to the engine")
    _add_context_flags(p, with_job_flags=True)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("prepare", help="build or load the teacher bundle")
    _add_context_flags(p, with_job_flags=False)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("evaluate", help="evaluate one architecture record")
    p.add_argument("arch", metavar="ARCH.json", help="path to an architecture record")
    _add_context_flags(p, with_job_flags=True)
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    level_name = os.environ.get("EVAL_WORKER_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (DatasetError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
