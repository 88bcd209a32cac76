"""Command-line entry point.

subcommands:
  search    run a search from a JSON config file
  validate  check an architecture record against the full search space
  params    print the analytic parameter-count breakdown
  mutate    apply one seeded evolution operation to a record
  analyze   grouped accuracy/robustness statistics over a history file

Exit codes: 0 success; 1 validation found violations; 2 configuration or
checkpoint problems; 3 I/O and parse errors; 4 worker-protocol failures
(including an empty worker pool); 5 the search itself failed to progress.
Set ROBUSTNAS_LOG=DEBUG|INFO|WARNING|ERROR for log verbosity.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime
import hashlib
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .analysis import all_stats, emit_table
from .arch import (
    Architecture,
    ModelShapeConfig,
    count_params_breakdown,
    parse,
    serialize,
    shape_to_record,
    validate,
)
from .dispatch import (
    DEFAULT_JOB_TIMEOUT_S,
    DEFAULT_RETRY_CAP,
    Dispatcher,
)
from .engine import (
    EngineConfig,
    SearchState,
    checkpoint_record,
    config_digest,
    individual_from_record,
    individual_to_record,
    init_population,
    init_population_async,
    restore_state,
    run,
    run_async,
)
from .errors import (
    CheckpointError,
    ConfigError,
    DispatchError,
    EvaluationFailed,
    EvolutionError,
    IncomparableError,
    PoolEmptyError,
    RecordParseError,
    SpaceError,
)
from .evolution import evolve
from .fitness import FitnessWeights, SurrogateConfig, make_surrogate, surrogate_to_record
from .space import DEFAULT_SPACE, SearchSpaceDef, space_from_record

__all__ = ["main", "load_app_config", "EXIT_OK", "EXIT_INVALID", "EXIT_CONFIG", "EXIT_IO", "EXIT_PROTOCOL", "EXIT_SEARCH"]

logger = logging.getLogger("robustnas.cli")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_PROTOCOL = 4
EXIT_SEARCH = 5

# Pass-through evaluation settings a worker receives with every job.  The
# engine never interprets them beyond forwarding.
DEFAULT_EVAL_CONFIG = {
    "kd_loss_weight": 0.5,
    "probe_loss_weight": 0.25,
    "logits_mse_weight": 0.25,
    "temperature": 2.0,
    "learning_rate": 5e-4,
    "epochs": 15,
    "similarity_threshold": 0.7,
    "robustness_samples": 200,
    "dataset": "toy-sentiment",
    "batch_size": 32,
}

_TOP_KEYS = {"space", "engine", "fitness", "surrogate", "shape", "dispatch", "run"}
_ENGINE_KEYS = {
    "population",
    "tournament_size",
    "init_ops_min",
    "init_ops_max",
    "patience",
    "max_evaluations",
    "seed",
    "evaluator",
    "eval_retry_cap",
    "max_in_flight",
}
_FITNESS_KEYS = {"mu1", "mu2", "mu3"}
_SURROGATE_KEYS = {"acc_base", "rob_base", "acc_coeffs", "rob_coeffs", "noise_amplitude", "noise_seed"}
_SHAPE_KEYS = {"vocab_size", "max_positions", "num_segments", "num_classes"}
_DISPATCH_KEYS = {
    "listen",
    "job_timeout_s",
    "retry_cap",
    "ping_interval_s",
    "eval_config",
    "min_workers",
    "worker_wait_s",
}
_RUN_KEYS = {"checkpoint_every"}


@dataclasses.dataclass
class AppConfig:
    space: SearchSpaceDef
    engine: EngineConfig
    surrogate: SurrogateConfig
    shape: ModelShapeConfig
    listen: list[tuple[str, int]]
    job_timeout_s: float
    retry_cap: int
    ping_interval_s: float
    eval_config: dict
    min_workers: int
    worker_wait_s: float
    checkpoint_every: int


def _section(config: dict, name: str, allowed: Optional[set] = None) -> dict:
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"config key '{name}' must be an object")
    if allowed is not None:
        unknown = set(value) - allowed
        if unknown:
            raise ConfigError(f"config section '{name}': unknown key(s): {', '.join(sorted(unknown))}")
    return value


def _parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise ConfigError(f"worker endpoint {text!r} is not HOST:PORT")
    try:
        return host, int(port)
    except ValueError:
        raise ConfigError(f"worker endpoint {text!r} has a non-numeric port") from None


def load_app_config(
    path: str,
    seed: Optional[int] = None,
    workers: Optional[str] = None,
    force_surrogate: bool = False,
) -> tuple[AppConfig, str]:
    """Load the single JSON config file; flags override individual keys.

    Returns the config plus the SHA-256 of the file bytes (recorded in the
    run manifest so a run can be traced back to its exact inputs).
    """
    raw = Path(path).read_bytes()
    file_sha = hashlib.sha256(raw).hexdigest()
    try:
        config = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not valid JSON: {exc}") from exc
    if not isinstance(config, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(config) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown key(s): {', '.join(sorted(unknown))}")

    space = space_from_record(_section(config, "space"), where="space")

    shape_sec = _section(config, "shape", _SHAPE_KEYS)
    try:
        shape = ModelShapeConfig(**shape_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section 'shape': {exc}") from exc

    fitness_sec = _section(config, "fitness", _FITNESS_KEYS)
    try:
        weights = FitnessWeights(**fitness_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section 'fitness': {exc}") from exc

    engine_sec = dict(_section(config, "engine", _ENGINE_KEYS))
    if seed is not None:
        engine_sec["seed"] = seed
    if workers is not None:
        engine_sec["evaluator"] = "external"
    if force_surrogate:
        engine_sec["evaluator"] = "surrogate"
    try:
        engine = EngineConfig(weights=weights, **engine_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section 'engine': {exc}") from exc

    surrogate_sec = _section(config, "surrogate", _SURROGATE_KEYS)
    try:
        surrogate = SurrogateConfig(shape=shape, **surrogate_sec)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config section 'surrogate': {exc}") from exc

    dispatch_sec = _section(config, "dispatch", _DISPATCH_KEYS)
    listen_raw = dispatch_sec.get("listen", ["127.0.0.1:7077"])
    if workers is not None:
        listen_raw = [w for w in workers.split(",") if w]
    if not isinstance(listen_raw, list) or not all(isinstance(e, str) for e in listen_raw):
        raise ConfigError("dispatch.listen must be a list of HOST:PORT strings")
    listen = [_parse_endpoint(e) for e in listen_raw]
    eval_config = dict(DEFAULT_EVAL_CONFIG)
    user_eval = dispatch_sec.get("eval_config", {})
    if not isinstance(user_eval, dict):
        raise ConfigError("dispatch.eval_config must be an object")
    eval_config.update(user_eval)

    run_sec = _section(config, "run", _RUN_KEYS)
    checkpoint_every = run_sec.get("checkpoint_every", 50)
    if not isinstance(checkpoint_every, int) or checkpoint_every < 0:
        raise ConfigError("run.checkpoint_every must be a non-negative integer")

    app = AppConfig(
        space=space,
        engine=engine,
        surrogate=surrogate,
        shape=shape,
        listen=listen,
        job_timeout_s=float(dispatch_sec.get("job_timeout_s", DEFAULT_JOB_TIMEOUT_S)),
        retry_cap=int(dispatch_sec.get("retry_cap", DEFAULT_RETRY_CAP)),
        ping_interval_s=float(dispatch_sec.get("ping_interval_s", 60.0)),
        eval_config=eval_config,
        min_workers=int(dispatch_sec.get("min_workers", 1)),
        worker_wait_s=float(dispatch_sec.get("worker_wait_s", 60.0)),
        checkpoint_every=checkpoint_every,
    )
    return app, file_sha


# ---------------------------------------------------------------------------
# search
# ---------------------------------------------------------------------------

def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _read_history_records(path: Path) -> list[dict]:
    if not path.exists():
        raise CheckpointError(f"history file {path} is missing; cannot resume")
    records = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise CheckpointError(f"{path}:{lineno}: corrupt history line: {exc.msg}") from exc
    return records


def _history_line(ind) -> str:
    return json.dumps(individual_to_record(ind), separators=(",", ":")) + "\n"


def cmd_search(args) -> int:
    cfg, file_sha = load_app_config(
        args.config, seed=args.seed, workers=args.workers, force_surrogate=args.surrogate
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    history_path = out / "history.jsonl"
    ckpt_path = out / "checkpoint.json"
    best_path = out / "best_arch.json"
    manifest_path = out / "manifest.json"

    if cfg.engine.evaluator == "surrogate":
        evaluator_extra = {"surrogate": surrogate_to_record(cfg.surrogate)}
    else:
        evaluator_extra = {"shape": shape_to_record(cfg.shape), "eval_config": cfg.eval_config}

    manifest = {
        "config_file_sha256": file_sha,
        "engine_digest": config_digest(cfg.space, cfg.engine, evaluator_extra),
        "seed": cfg.engine.seed,
        "evaluator": cfg.engine.evaluator,
        "started_at": _utcnow(),
        "finished_at": None,
        "outputs": {
            "history": str(history_path),
            "checkpoint": str(ckpt_path),
            "best": str(best_path),
        },
    }
    _write_atomic(manifest_path, json.dumps(manifest, indent=2) + "\n")

    state: Optional[SearchState] = None
    if args.resume:
        if not ckpt_path.exists():
            raise CheckpointError(f"--resume given but {ckpt_path} does not exist")
        try:
            ckpt = json.loads(ckpt_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CheckpointError(f"{ckpt_path}: corrupt checkpoint: {exc.msg}") from exc
        records = _read_history_records(history_path)
        state = restore_state(ckpt, cfg.space, cfg.engine, records, extra=evaluator_extra)
        # Drop any lines written after the checkpoint; the resumed run
        # regenerates them.
        with history_path.open("w", encoding="utf-8") as fh:
            for ind in state.history:
                fh.write(_history_line(ind))
        print(f"resumed at generation {state.generation} ({state.evaluations} evaluations spent)")
    elif ckpt_path.exists():
        logger.warning("starting fresh; existing checkpoint in %s will be overwritten", out)

    history_file = history_path.open("a" if args.resume else "w", encoding="utf-8")
    pending_since_ckpt = 0

    def write_history(ind) -> None:
        history_file.write(_history_line(ind))
        history_file.flush()

    def checkpoint_now(live_state: SearchState) -> None:
        _write_atomic(
            ckpt_path,
            json.dumps(checkpoint_record(live_state, cfg.space, cfg.engine, extra=evaluator_extra)) + "\n",
        )

    def on_generation(live_state: SearchState, report) -> None:
        nonlocal pending_since_ckpt
        write_history(report.offspring)
        pending_since_ckpt += 1
        if cfg.checkpoint_every and pending_since_ckpt >= cfg.checkpoint_every:
            checkpoint_now(live_state)
            pending_since_ckpt = 0

    try:
        if cfg.engine.evaluator == "surrogate":
            evaluator = make_surrogate(cfg.surrogate)
            if state is None:
                state = init_population(cfg.space, cfg.engine, evaluator)
                for ind in state.history:
                    write_history(ind)
            result = run(cfg.space, cfg.engine, evaluator, state=state, on_generation=on_generation)
        else:
            with Dispatcher(
                listen=cfg.listen,
                shape=cfg.shape,
                eval_config=cfg.eval_config,
                job_timeout=cfg.job_timeout_s,
                retry_cap=cfg.retry_cap,
                ping_interval=cfg.ping_interval_s,
            ) as dispatcher:
                bound = ", ".join(f"{h}:{p}" for h, p in dispatcher.addresses)
                print(f"listening for workers on {bound}")
                if not dispatcher.wait_for_workers(cfg.min_workers, cfg.worker_wait_s):
                    raise PoolEmptyError(
                        f"fewer than {cfg.min_workers} worker(s) connected within {cfg.worker_wait_s}s"
                    )
                if state is None:
                    state = init_population_async(cfg.space, cfg.engine, dispatcher)
                    for ind in state.history:
                        write_history(ind)
                result = run_async(
                    cfg.space, cfg.engine, dispatcher, state=state, on_generation=on_generation
                )
        checkpoint_now(state)
    finally:
        history_file.close()

    _write_atomic(best_path, serialize(result.best.arch) + "\n")
    manifest["finished_at"] = _utcnow()
    manifest["result"] = {
        "stop_reason": result.stop_reason,
        "generations": result.generations,
        "evaluations": result.evaluations,
        "best_member_id": result.best.member_id,
        "best_fitness": result.best.fitness,
    }
    _write_atomic(manifest_path, json.dumps(manifest, indent=2) + "\n")

    print(
        f"stopped ({result.stop_reason}) after {result.generations} generations,"
        f" {result.evaluations} offspring evaluations"
    )
    print(f"best fitness {result.best.fitness:.6f} (member {result.best.member_id}) -> {best_path}")
    if result.stop_reason == "pool_empty":
        print("worker pool emptied; resume with --resume once workers are back", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


# ---------------------------------------------------------------------------
# record-level commands
# ---------------------------------------------------------------------------

def _load_arch(path: str) -> Architecture:
    return parse(Path(path).read_text(encoding="utf-8"))


def cmd_validate(args) -> int:
    report = validate(_load_arch(args.arch), DEFAULT_SPACE)
    for violation in report.violations:
        print(f"violation: {violation}")
    for warning in report.warnings:
        print(f"warning: {warning}")
    print("OK" if report.ok else f"INVALID ({len(report.violations)} violation(s))")
    return EXIT_OK if report.ok else EXIT_INVALID


def cmd_params(args) -> int:
    shape = ModelShapeConfig(
        vocab_size=args.vocab,
        max_positions=args.max_pos,
        num_segments=args.segments,
        num_classes=args.classes,
    )
    breakdown = count_params_breakdown(_load_arch(args.arch), shape)
    for part in ("embedding", "blocks", "classifier", "total"):
        print(f"{part:>10}: {breakdown[part]:,}")
    return EXIT_OK


def cmd_mutate(args) -> int:
    arch = _load_arch(args.arch)
    mutated, op, repairs = evolve(arch, DEFAULT_SPACE, rng_seed=args.seed)
    print(
        json.dumps(
            {
                "arch": json.loads(serialize(mutated)),
                "op": {
                    "kind": op.kind.value,
                    "vertex": op.vertex,
                    "attribute": op.attribute,
                    "before": _plain(op.before),
                    "after": _plain(op.after),
                },
                "repairs": [
                    {"added_edge": list(r.added_edge), "reason": r.reason} for r in repairs
                ],
            },
            indent=2,
        )
    )
    return EXIT_OK


def _plain(value):
    if hasattr(value, "value"):
        return value.value
    if isinstance(value, tuple):
        return list(value)
    return value


def cmd_analyze(args) -> int:
    path = Path(args.history)
    individuals = []
    skipped = 0
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordParseError(f"invalid JSON: {exc.msg}", f"{path}:{lineno}") from exc
            try:
                # location is carried by the RecordParseError, not the message
                ind = individual_from_record(record, where="record")
            except CheckpointError as exc:
                raise RecordParseError(str(exc), f"{path}:{lineno}") from None
            if ind.scores is None:
                skipped += 1
                continue
            individuals.append(ind)
    if skipped:
        print(f"skipping {skipped} failed evaluation(s) with no scores", file=sys.stderr)
    if not individuals:
        print("history contains no scored individuals", file=sys.stderr)
        return EXIT_IO
    table = emit_table(all_stats(individuals), fmt=args.format)
    _write_atomic(Path(args.out), table)
    print(f"wrote statistics over {len(individuals)} individuals to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="robustnas",
        description="Robustness-aware evolutionary architecture search over block DAGs.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a search from a config file")
    p.add_argument("--config", required=True, help="JSON configuration file")
    p.add_argument("--out", required=True, help="output directory for run artifacts")
    p.add_argument("--seed", type=int, default=None, help="override engine.seed")
    p.add_argument("--resume", action="store_true", help="continue from the checkpoint in --out")
    p.add_argument(
        "--workers",
        default=None,
        help="comma-separated HOST:PORT listen endpoints for external workers",
    )
    p.add_argument("--surrogate", action="store_true", help="force the built-in surrogate evaluator")
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("validate", help="validate an architecture record")
    p.add_argument("arch", help="path to a canonical architecture record")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("params", help="print the parameter-count breakdown")
    p.add_argument("arch", help="path to a canonical architecture record")
    p.add_argument("--vocab", type=int, default=30522)
    p.add_argument("--max-pos", type=int, default=128)
    p.add_argument("--segments", type=int, default=2)
    p.add_argument("--classes", type=int, default=2)
    p.set_defaults(func=cmd_params)

    p = sub.add_parser("mutate", help="apply one seeded evolution operation")
    p.add_argument("arch", help="path to a canonical architecture record")
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_mutate)

    p = sub.add_parser("analyze", help="grouped statistics over a history file")
    p.add_argument("history", help="history file, one individual record per line")
    p.add_argument("--out", required=True, help="output table path")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_analyze)

    return parser


def main(argv=None) -> int:
    level_name = os.environ.get("ROBUSTNAS_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CheckpointError, SpaceError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RecordParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DispatchError as exc:
        print(f"worker-protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except (EvolutionError, EvaluationFailed, IncomparableError) as exc:
        print(f"search failure: {exc}", file=sys.stderr)
        return EXIT_SEARCH


if __name__ == "__main__":
    sys.exit(main())
