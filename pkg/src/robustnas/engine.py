"""Steady-state evolutionary search: population init from the simplest
member, size-2 tournaments, one birth and one death per generation,
patience/budget stopping, and resumable checkpoints.

Synchronous runs (one evaluation in flight) are bit-reproducible from the
seed.  Asynchronous runs keep up to ``max_in_flight`` evaluations open
through a dispatcher and serialize insert/eliminate in completion order;
they preserve every population invariant but not trace determinism.
"""

from __future__ import annotations

import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .arch import Architecture, canonical_hash, from_record, to_record
from .errors import CheckpointError, ConfigError, EvaluationFailed, PoolEmptyError
from .evolution import EvolutionOp, RepairStep, evolve
from .fitness import (
    FAILED_FITNESS,
    EvalCache,
    EvalScores,
    Evaluator,
    FitnessWeights,
    ScoredIndividual,
    aggregate,
    cached_eval,
)
from .space import SearchSpaceDef, simplest, space_to_record

__all__ = [
    "EngineConfig",
    "SearchState",
    "GenerationReport",
    "SearchResult",
    "init_population",
    "init_population_async",
    "tournament",
    "step",
    "run",
    "run_async",
    "config_digest",
    "checkpoint_record",
    "restore_state",
    "individual_to_record",
    "individual_from_record",
    "STOP_PATIENCE",
    "STOP_BUDGET",
    "STOP_POOL_EMPTY",
]

logger = logging.getLogger("robustnas.engine")

STOP_PATIENCE = "patience"
STOP_BUDGET = "budget"
STOP_POOL_EMPTY = "pool_empty"

CHECKPOINT_FORMAT = "robustnas-checkpoint-v1"

# How many times one population slot may be refilled with a fresh candidate
# when evaluations keep failing, before the run itself is declared failed.
INIT_REGEN_CAP = 25


@dataclass(frozen=True)
class EngineConfig:
    """Knobs of the outer loop.

    ``max_evaluations`` budgets offspring evaluations: initialization always
    scores exactly ``population`` individuals on top of it, and a budget of 0
    returns the best initial member.  ``evaluator`` only names the intended
    scoring backend ("surrogate" or "external"); the engine functions take
    the actual evaluator or dispatcher as an argument.
    """

    population: int = 100
    tournament_size: int = 2
    init_ops_min: int = 5
    init_ops_max: int = 30
    patience: int = 50
    max_evaluations: int = 1000
    seed: int = 0
    weights: FitnessWeights = FitnessWeights()
    evaluator: str = "surrogate"
    eval_retry_cap: int = 3
    max_in_flight: int = 1

    def __post_init__(self):
        if self.population < 2:
            raise ConfigError(f"population must be >= 2, got {self.population}")
        if not (2 <= self.tournament_size <= self.population):
            raise ConfigError(
                f"tournament_size must be within [2, population={self.population}],"
                f" got {self.tournament_size}"
            )
        if not (0 <= self.init_ops_min <= self.init_ops_max):
            raise ConfigError(
                f"init op-count range [{self.init_ops_min}, {self.init_ops_max}] is not a range"
            )
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.max_evaluations < 0:
            raise ConfigError(f"max_evaluations must be >= 0, got {self.max_evaluations}")
        if self.evaluator not in ("surrogate", "external"):
            raise ConfigError(f"evaluator must be 'surrogate' or 'external', got {self.evaluator!r}")
        if self.eval_retry_cap < 1:
            raise ConfigError(f"eval_retry_cap must be >= 1, got {self.eval_retry_cap}")
        if self.max_in_flight < 1:
            raise ConfigError(f"max_in_flight must be >= 1, got {self.max_in_flight}")


@dataclass
class SearchState:
    """Everything a running search owns; checkpoints snapshot this (minus
    the cache, which is rebuilt from history on restore)."""

    rng: random.Random
    population: dict[int, ScoredIndividual]
    history: list[ScoredIndividual]
    best: ScoredIndividual
    cache: EvalCache = field(default_factory=EvalCache)
    generation: int = 0
    evaluations: int = 0  # offspring evaluations only; the budget unit
    stagnation: int = 0
    next_member_id: int = 0


@dataclass(frozen=True)
class GenerationReport:
    generation: int
    offspring: ScoredIndividual
    eliminated: ScoredIndividual
    op: Optional[EvolutionOp]
    repairs: tuple[RepairStep, ...]
    best_id: int
    best_fitness: float
    stagnation: int


@dataclass(frozen=True)
class SearchResult:
    best: ScoredIndividual
    history: tuple[ScoredIndividual, ...]
    generations: int
    evaluations: int
    stop_reason: str


def _best_key(ind: ScoredIndividual) -> tuple[float, int]:
    # Max fitness wins; on ties the older individual (lower id) is kept.
    return (ind.fitness, -ind.member_id)


def _score(
    arch: Architecture,
    evaluator: Evaluator,
    cache: EvalCache,
    weights: FitnessWeights,
    member_id: int,
    generation: int,
    source: str,
) -> ScoredIndividual:
    """Evaluate and aggregate; failures become a -inf sentinel individual
    that loses every tournament instead of aborting the run."""
    try:
        scores = cached_eval(arch, evaluator, cache)
        fitness = aggregate(scores, weights)
    except EvaluationFailed as exc:
        logger.warning("evaluation failed for member %d: %s", member_id, exc)
        return ScoredIndividual(member_id, arch, None, FAILED_FITNESS, generation, source)
    return ScoredIndividual(member_id, arch, scores, fitness, generation, source)


def _init_arch(space: SearchSpaceDef, config: EngineConfig, rng: random.Random) -> Architecture:
    """One initial candidate: K random evolution ops applied to the simplest
    member, K drawn uniformly from the configured range."""
    arch = simplest(space)
    for _ in range(rng.randint(config.init_ops_min, config.init_ops_max)):
        arch, _, _ = evolve(arch, space, rng.getrandbits(63))
    return arch


def init_population(
    space: SearchSpaceDef,
    config: EngineConfig,
    evaluator: Evaluator,
    source: str = "surrogate",
) -> SearchState:
    """Build and score the initial population; deterministic per seed.

    A failing evaluation is retried up to ``eval_retry_cap`` times, then the
    slot is refilled with a freshly generated candidate.
    """
    rng = random.Random(config.seed)
    cache = EvalCache()
    population: dict[int, ScoredIndividual] = {}
    history: list[ScoredIndividual] = []
    for member_id in range(config.population):
        ind = None
        for _ in range(INIT_REGEN_CAP):
            arch = _init_arch(space, config, rng)
            for _ in range(config.eval_retry_cap):
                try:
                    scores = cached_eval(arch, evaluator, cache)
                    fitness = aggregate(scores, config.weights)
                except EvaluationFailed as exc:
                    logger.warning("init evaluation failed (member %d): %s", member_id, exc)
                    continue
                ind = ScoredIndividual(member_id, arch, scores, fitness, 0, source)
                break
            if ind is not None:
                break
        if ind is None:
            raise EvaluationFailed(
                f"initial member {member_id}: no candidate evaluated successfully"
                f" after {INIT_REGEN_CAP} regenerations"
            )
        population[member_id] = ind
        history.append(ind)
    best = max(population.values(), key=_best_key)
    return SearchState(
        rng=rng,
        population=population,
        history=history,
        best=best,
        cache=cache,
        next_member_id=config.population,
    )


def tournament(
    population: Mapping[int, ScoredIndividual], size: int, rng: random.Random
) -> tuple[int, int]:
    """Sample `size` distinct members uniformly; return (winner id, loser id).

    Winner is the fitness max (ties to the lower id), loser the fitness min
    (ties to the higher id); with size >= 2 they are always distinct.
    """
    ids = sorted(population)
    if size > len(ids):
        raise ValueError(f"tournament size {size} exceeds population {len(ids)}")
    chosen = rng.sample(ids, size)
    winner = max(chosen, key=lambda i: (population[i].fitness, -i))
    loser = min(chosen, key=lambda i: (population[i].fitness, -i))
    return winner, loser


def step(
    state: SearchState,
    space: SearchSpaceDef,
    config: EngineConfig,
    evaluator: Evaluator,
    source: str = "surrogate",
) -> GenerationReport:
    """One generation: tournament, mutate the winner, evaluate, insert the
    offspring, eliminate the loser."""
    winner_id, loser_id = tournament(state.population, config.tournament_size, state.rng)
    parent = state.population[winner_id]
    child_arch, op, repairs = evolve(parent.arch, space, state.rng.getrandbits(63))

    member_id = state.next_member_id
    state.next_member_id += 1
    state.generation += 1
    child = _score(child_arch, evaluator, state.cache, config.weights, member_id, state.generation, source)

    eliminated = state.population.pop(loser_id)
    state.population[member_id] = child
    state.evaluations += 1
    state.history.append(child)
    _update_best(state, child)
    return GenerationReport(
        generation=state.generation,
        offspring=child,
        eliminated=eliminated,
        op=op,
        repairs=tuple(repairs),
        best_id=state.best.member_id,
        best_fitness=state.best.fitness,
        stagnation=state.stagnation,
    )


def _update_best(state: SearchState, child: ScoredIndividual) -> None:
    # Strict improvement only: ties keep the older best, and the best-so-far
    # sequence is non-decreasing by construction.
    if child.fitness > state.best.fitness:
        state.best = child
        state.stagnation = 0
    else:
        state.stagnation += 1


def _stop_reason(state: SearchState, config: EngineConfig, in_flight: int = 0) -> Optional[str]:
    if state.stagnation >= config.patience:
        return STOP_PATIENCE
    if state.evaluations + in_flight >= config.max_evaluations:
        return STOP_BUDGET
    return None


def run(
    space: SearchSpaceDef,
    config: EngineConfig,
    evaluator: Evaluator,
    state: Optional[SearchState] = None,
    on_generation: Optional[Callable[[SearchState, GenerationReport], None]] = None,
    source: str = "surrogate",
) -> SearchResult:
    """Search until the best fitness stalls for `patience` generations or the
    evaluation budget runs out; returns the best member and the full
    append-only history (initial population included)."""
    if state is None:
        state = init_population(space, config, evaluator, source=source)
    while True:
        stop = _stop_reason(state, config)
        if stop is not None:
            break
        report = step(state, space, config, evaluator, source=source)
        if on_generation is not None:
            on_generation(state, report)
    return SearchResult(
        best=state.best,
        history=tuple(state.history),
        generations=state.generation,
        evaluations=state.evaluations,
        stop_reason=stop,
    )


# ---------------------------------------------------------------------------
# Asynchronous mode
# ---------------------------------------------------------------------------

@dataclass
class _PendingBirth:
    member_id: int
    arch: Architecture
    loser_id: Optional[int]  # None during initialization
    regen_left: int = INIT_REGEN_CAP


def _resolved_individual(
    pending: _PendingBirth,
    resolution,
    weights: FitnessWeights,
    generation: int,
) -> ScoredIndividual:
    if resolution.scores is None:
        logger.warning(
            "job %s for member %d failed: %s",
            resolution.job_id,
            pending.member_id,
            resolution.error,
        )
        return ScoredIndividual(
            pending.member_id, pending.arch, None, FAILED_FITNESS, generation, resolution.worker_id or "dispatch"
        )
    fitness = aggregate(resolution.scores, weights)
    return ScoredIndividual(
        pending.member_id, pending.arch, resolution.scores, fitness, generation, resolution.worker_id
    )


def init_population_async(space: SearchSpaceDef, config: EngineConfig, dispatcher) -> SearchState:
    """Initialization with all candidate evaluations in flight at once.

    A candidate whose job resolves as failure (after dispatcher retries) is
    replaced by a fresh one; member ids stay fixed per slot.
    """
    rng = random.Random(config.seed)
    population: dict[int, ScoredIndividual] = {}
    pending: dict[str, _PendingBirth] = {}
    for member_id in range(config.population):
        arch = _init_arch(space, config, rng)
        job_id = dispatcher.submit(arch)
        pending[job_id] = _PendingBirth(member_id, arch, None)
    while pending:
        resolution = dispatcher.next_result()
        birth = pending.pop(resolution.job_id, None)
        if birth is None:
            logger.warning("resolution for unknown job %s ignored", resolution.job_id)
            continue
        if resolution.scores is None and birth.regen_left > 0:
            arch = _init_arch(space, config, rng)
            job_id = dispatcher.submit(arch)
            pending[job_id] = _PendingBirth(birth.member_id, arch, None, birth.regen_left - 1)
            continue
        population[birth.member_id] = _resolved_individual(birth, resolution, config.weights, 0)
    history = [population[i] for i in sorted(population)]
    best = max(population.values(), key=_best_key)
    return SearchState(
        rng=rng,
        population=population,
        history=history,
        best=best,
        next_member_id=config.population,
    )


def run_async(
    space: SearchSpaceDef,
    config: EngineConfig,
    dispatcher,
    state: Optional[SearchState] = None,
    on_generation: Optional[Callable[[SearchState, GenerationReport], None]] = None,
) -> SearchResult:
    """Steady-state search with up to ``max_in_flight`` evaluations open.

    Tournaments run at submission time; the insert/eliminate pair runs when
    the evaluation completes, so the population size invariant holds at every
    completion.  If the recorded loser was already eliminated by an earlier
    completion, the current fitness minimum is eliminated instead.  Total
    worker loss stops the run with stop_reason "pool_empty"; the state is
    checkpointable and resumable at that point.
    """
    if state is None:
        state = init_population_async(space, config, dispatcher)
    pending: dict[str, _PendingBirth] = {}
    stop = None
    pool_empty = False
    while True:
        if not pool_empty:
            while len(pending) < config.max_in_flight:
                if _stop_reason(state, config, in_flight=len(pending)) is not None:
                    break
                winner_id, loser_id = tournament(state.population, config.tournament_size, state.rng)
                parent = state.population[winner_id]
                child_arch, _op, _repairs = evolve(parent.arch, space, state.rng.getrandbits(63))
                try:
                    job_id = dispatcher.submit(child_arch)
                except PoolEmptyError as exc:
                    logger.error("cannot submit: %s", exc)
                    pool_empty = True
                    break
                pending[job_id] = _PendingBirth(state.next_member_id, child_arch, loser_id)
                state.next_member_id += 1
        if not pending:
            stop = STOP_POOL_EMPTY if pool_empty else _stop_reason(state, config)
            break
        try:
            resolution = dispatcher.next_result()
        except PoolEmptyError as exc:
            # In-flight offspring are lost (never inserted); the population
            # is whole, so the state can checkpoint and resume later.
            logger.error("worker pool empty with %d jobs unresolved: %s", len(pending), exc)
            pending.clear()
            pool_empty = True
            continue
        birth = pending.pop(resolution.job_id, None)
        if birth is None:
            logger.warning("resolution for unknown job %s ignored", resolution.job_id)
            continue
        state.generation += 1
        child = _resolved_individual(birth, resolution, config.weights, state.generation)
        state.population[child.member_id] = child
        if birth.loser_id is not None and birth.loser_id in state.population:
            eliminated = state.population.pop(birth.loser_id)
        else:
            fallback = min(state.population, key=lambda i: (state.population[i].fitness, -i))
            eliminated = state.population.pop(fallback)
        state.evaluations += 1
        state.history.append(child)
        _update_best(state, child)
        if on_generation is not None:
            on_generation(
                state,
                GenerationReport(
                    generation=state.generation,
                    offspring=child,
                    eliminated=eliminated,
                    op=None,
                    repairs=(),
                    best_id=state.best.member_id,
                    best_fitness=state.best.fitness,
                    stagnation=state.stagnation,
                ),
            )
    return SearchResult(
        best=state.best,
        history=tuple(state.history),
        generations=state.generation,
        evaluations=state.evaluations,
        stop_reason=stop,
    )


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

def _canonical_dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _weights_record(weights: FitnessWeights) -> dict:
    return {"mu1": weights.mu1, "mu2": weights.mu2, "mu3": weights.mu3}


def _config_record(config: EngineConfig) -> dict:
    # Stopping and throughput knobs (patience, max_evaluations, max_in_flight)
    # are deliberately absent: they decide where a run stops, not which
    # trajectory it takes, so a resumed run may extend the budget.
    return {
        "population": config.population,
        "tournament_size": config.tournament_size,
        "init_ops_min": config.init_ops_min,
        "init_ops_max": config.init_ops_max,
        "seed": config.seed,
        "weights": _weights_record(config.weights),
        "evaluator": config.evaluator,
        "eval_retry_cap": config.eval_retry_cap,
    }


def config_digest(space: SearchSpaceDef, config: EngineConfig, extra: Optional[dict] = None) -> str:
    """Content hash of everything that must match for a checkpoint to resume.

    ``extra`` carries caller-owned trajectory inputs (the CLI passes the
    evaluator settings, e.g. the surrogate coefficient tables).
    """
    payload = {"space": space_to_record(space), "engine": _config_record(config)}
    if extra is not None:
        payload["extra"] = extra
    return hashlib.sha256(_canonical_dumps(payload).encode("utf-8")).hexdigest()


def individual_to_record(ind: ScoredIndividual) -> dict:
    return {
        "member_id": ind.member_id,
        "arch": to_record(ind.arch),
        "scores": None
        if ind.scores is None
        else {
            "accuracy_pct": ind.scores.accuracy_pct,
            "robustness_pct": ind.scores.robustness_pct,
            "param_count": ind.scores.param_count,
        },
        "fitness": None if ind.scores is None else ind.fitness,
        "birth_generation": ind.birth_generation,
        "eval_source": ind.eval_source,
    }


def individual_from_record(record: Mapping, where: str = "individual") -> ScoredIndividual:
    try:
        scores_rec = record["scores"]
        scores = (
            None
            if scores_rec is None
            else EvalScores(
                accuracy_pct=scores_rec["accuracy_pct"],
                robustness_pct=scores_rec["robustness_pct"],
                param_count=scores_rec["param_count"],
            )
        )
        fitness = FAILED_FITNESS if record["fitness"] is None else float(record["fitness"])
        return ScoredIndividual(
            member_id=record["member_id"],
            arch=from_record(record["arch"], where=f"{where}.arch"),
            scores=scores,
            fitness=fitness,
            birth_generation=record["birth_generation"],
            eval_source=record["eval_source"],
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{where}: malformed individual record: {exc}") from exc


def _rng_state_record(rng: random.Random) -> list:
    version, internal, gauss = rng.getstate()
    return [version, list(internal), gauss]


def _rng_from_record(record) -> random.Random:
    try:
        version, internal, gauss = record
        rng = random.Random()
        rng.setstate((version, tuple(internal), gauss))
        return rng
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed rng state: {exc}") from exc


def checkpoint_record(
    state: SearchState,
    space: SearchSpaceDef,
    config: EngineConfig,
    extra: Optional[dict] = None,
) -> dict:
    """Resumable snapshot; the history itself lives in a separate
    one-record-per-line file, referenced here only by its length."""
    body = {
        "format": CHECKPOINT_FORMAT,
        "config_digest": config_digest(space, config, extra),
        "seed": config.seed,
        "generation": state.generation,
        "evaluations": state.evaluations,
        "stagnation": state.stagnation,
        "next_member_id": state.next_member_id,
        "rng_state": _rng_state_record(state.rng),
        "population": [individual_to_record(state.population[i]) for i in sorted(state.population)],
        "best": individual_to_record(state.best),
        "history_count": len(state.history),
    }
    body["checksum"] = hashlib.sha256(_canonical_dumps(body).encode("utf-8")).hexdigest()
    return body


def restore_state(
    record: Mapping,
    space: SearchSpaceDef,
    config: EngineConfig,
    history_records: Sequence[Mapping],
    extra: Optional[dict] = None,
) -> SearchState:
    """Rebuild a SearchState from a checkpoint.

    Refuses corrupted records (checksum mismatch) and checkpoints taken under
    a different space/engine configuration.  ``history_records`` may contain
    lines written after the checkpoint; the excess tail is dropped, since a
    resumed run regenerates it.
    """
    if not isinstance(record, Mapping):
        raise CheckpointError(f"checkpoint must be an object, got {type(record).__name__}")
    if record.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"unknown checkpoint format {record.get('format')!r}")
    body = {k: v for k, v in record.items() if k != "checksum"}
    expect = hashlib.sha256(_canonical_dumps(body).encode("utf-8")).hexdigest()
    if record.get("checksum") != expect:
        raise CheckpointError("checkpoint corrupted: checksum mismatch")
    want_digest = config_digest(space, config, extra)
    if record["config_digest"] != want_digest:
        raise CheckpointError(
            "checkpoint was taken under a different configuration"
            f" (digest {record['config_digest'][:12]}.. != {want_digest[:12]}..); refusing to resume"
        )

    count = record["history_count"]
    if len(history_records) < count:
        raise CheckpointError(
            f"history file has {len(history_records)} records, checkpoint expects {count}"
        )
    if len(history_records) > count:
        logger.info(
            "dropping %d history record(s) written after the checkpoint",
            len(history_records) - count,
        )
    history = [
        individual_from_record(r, where=f"history[{i}]") for i, r in enumerate(history_records[:count])
    ]

    population = {}
    for i, ind_rec in enumerate(record["population"]):
        ind = individual_from_record(ind_rec, where=f"population[{i}]")
        population[ind.member_id] = ind
    if len(population) != config.population:
        raise CheckpointError(
            f"population snapshot has {len(population)} members, config says {config.population}"
        )
    state = SearchState(
        rng=_rng_from_record(record["rng_state"]),
        population=population,
        history=history,
        best=individual_from_record(record["best"], where="best"),
        generation=record["generation"],
        evaluations=record["evaluations"],
        stagnation=record["stagnation"],
        next_member_id=record["next_member_id"],
    )
    # Warm the cache so previously seen architectures are not re-evaluated.
    for ind in state.history:
        if ind.scores is not None:
            state.cache.store(canonical_hash(ind.arch), ind.scores)
    return state
