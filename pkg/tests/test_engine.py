"""Steady-state loop: selection, stepping, stopping, checkpoint/resume."""

import json
import math
import random

import pytest

from robustnas.arch import canonical_hash
from robustnas.engine import (
    STOP_BUDGET,
    STOP_PATIENCE,
    STOP_POOL_EMPTY,
    EngineConfig,
    checkpoint_record,
    config_digest,
    individual_from_record,
    individual_to_record,
    init_population,
    init_population_async,
    restore_state,
    run,
    run_async,
    step,
    tournament,
)
from robustnas.errors import CheckpointError, ConfigError, EvaluationFailed, PoolEmptyError
from robustnas.fitness import EvalScores, FitnessWeights, ScoredIndividual
from robustnas.space import DEFAULT_SPACE, contains, simplest


def make_population(fitnesses):
    arch = simplest(DEFAULT_SPACE)
    return {
        i: ScoredIndividual(i, arch, EvalScores(50.0, 50.0, 1), f, 0, "test")
        for i, f in enumerate(fitnesses)
    }


class TestConfig:
    def test_defaults_match_reference_settings(self):
        cfg = EngineConfig()
        assert cfg.population == 100
        assert cfg.tournament_size == 2
        assert cfg.patience == 50
        assert (cfg.weights.mu1, cfg.weights.mu2, cfg.weights.mu3) == (1.0, 1.0, 2.0)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"population": 1},
            {"tournament_size": 1},
            {"tournament_size": 101},
            {"init_ops_min": 5, "init_ops_max": 4},
            {"init_ops_min": -1},
            {"max_evaluations": -1},
            {"patience": 0},
            {"evaluator": "oracle"},
            {"eval_retry_cap": 0},
            {"max_in_flight": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ConfigError):
            EngineConfig(**kwargs)


class TestInitPopulation:
    def test_size_ids_and_membership(self, default_space, flat_surrogate):
        cfg = EngineConfig(population=20, seed=5)
        state = init_population(default_space, cfg, flat_surrogate)
        assert set(state.population) == set(range(20))
        assert state.next_member_id == 20
        for ind in state.population.values():
            assert contains(default_space, ind.arch)
            assert ind.birth_generation == 0
            assert ind.scores is not None

    def test_deterministic(self, default_space, flat_surrogate):
        cfg = EngineConfig(population=12, seed=9)
        a = init_population(default_space, cfg, flat_surrogate)
        b = init_population(default_space, cfg, flat_surrogate)
        assert [canonical_hash(i.arch) for i in a.population.values()] == [
            canonical_hash(i.arch) for i in b.population.values()
        ]

    def test_zero_ops_yields_all_simplest(self, default_space, flat_surrogate):
        cfg = EngineConfig(population=6, init_ops_min=0, init_ops_max=0, seed=1)
        state = init_population(default_space, cfg, flat_surrogate)
        base = simplest(default_space)
        assert all(ind.arch == base for ind in state.population.values())

    def test_best_points_at_max(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=15, seed=2)
        state = init_population(default_space, cfg, noisy_surrogate)
        assert state.best.fitness == max(i.fitness for i in state.population.values())


class TestTournament:
    def test_winner_and_loser_by_fitness(self):
        population = make_population([1.0, 5.0, 3.0])
        rng = random.Random(0)
        for _ in range(50):
            winner, loser = tournament(population, 2, rng)
            assert population[winner].fitness >= population[loser].fitness
            assert winner != loser

    def test_tie_prefers_lower_id_winner(self):
        population = make_population([2.0, 2.0, 2.0, 2.0])
        rng = random.Random(3)
        for _ in range(50):
            winner, loser = tournament(population, 2, rng)
            assert winner < loser

    def test_full_tournament_is_argmax_argmin(self):
        population = make_population([4.0, 9.0, 1.0, 6.0])
        winner, loser = tournament(population, 4, random.Random(0))
        assert winner == 1 and loser == 2

    def test_participation_is_uniform(self):
        # distinct fitnesses so ties never mask the draw; every member should
        # appear in ~2/10 of 10k draws: Binomial(10000, 0.2), sigma = 40
        population = make_population([float(i) for i in range(10)])
        rng = random.Random(1234)
        seen = {i: 0 for i in population}
        draws = 10_000
        for _ in range(draws):
            winner, loser = tournament(population, 2, rng)
            seen[winner] += 1
            seen[loser] += 1
        expected = draws * 2 / 10
        sigma = math.sqrt(draws * 0.2 * 0.8)
        for member, count in seen.items():
            assert abs(count - expected) < 5 * sigma, (member, count)


class TestStepAndRun:
    def test_step_replaces_one_member(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=10, seed=4)
        state = init_population(default_space, cfg, noisy_surrogate)
        before = dict(state.population)
        report = step(state, default_space, cfg, noisy_surrogate)
        assert len(state.population) == 10
        assert report.offspring.member_id == 10
        assert report.eliminated.member_id in before
        assert report.offspring.member_id in state.population
        assert report.eliminated.member_id not in state.population
        assert state.evaluations == 1
        assert state.history[-1] is report.offspring

    def test_budget_zero_returns_best_of_init(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=25, max_evaluations=0, seed=6)
        result = run(default_space, cfg, noisy_surrogate)
        assert result.stop_reason == STOP_BUDGET
        assert result.generations == 0
        assert result.evaluations == 0
        # history carries the scored initial population, nothing else
        assert len(result.history) == 25
        assert all(i.birth_generation == 0 for i in result.history)
        assert result.best.fitness == max(
            i.fitness for i in init_population(default_space, cfg, noisy_surrogate).population.values()
        )

    def test_budget_stop_is_exact(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=10, max_evaluations=37, patience=10_000, seed=7)
        result = run(default_space, cfg, noisy_surrogate)
        assert result.stop_reason == STOP_BUDGET
        assert result.evaluations == 37
        assert result.generations == 37
        assert len(result.history) == 10 + 37  # init population + offspring

    def test_patience_stop_on_flat_landscape(self, default_space):
        constant = lambda arch: EvalScores(50.0, 50.0, 1_000_000)  # noqa: E731
        cfg = EngineConfig(population=8, patience=13, max_evaluations=10_000, seed=8)
        result = run(default_space, cfg, constant)
        assert result.stop_reason == STOP_PATIENCE
        assert result.generations == 13  # no strict improvement is possible

    def test_run_deterministic(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=10, max_evaluations=60, seed=11)
        a = run(default_space, cfg, noisy_surrogate)
        b = run(default_space, cfg, noisy_surrogate)
        assert [i.fitness for i in a.history] == [i.fitness for i in b.history]
        assert canonical_hash(a.best.arch) == canonical_hash(b.best.arch)

    def test_seed_changes_trajectory(self, default_space, noisy_surrogate):
        base = EngineConfig(population=10, max_evaluations=40, seed=0)
        other = EngineConfig(population=10, max_evaluations=40, seed=1)
        a = run(default_space, base, noisy_surrogate)
        b = run(default_space, other, noisy_surrogate)
        assert [i.fitness for i in a.history] != [i.fitness for i in b.history]

    def test_best_sequence_monotone(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=10, max_evaluations=150, seed=12)
        bests = []
        run(default_space, cfg, noisy_surrogate, on_generation=lambda s, r: bests.append(r.best_fitness))
        assert bests == sorted(bests)

    def test_failed_evaluations_do_not_stop_the_run(self, default_space, noisy_surrogate):
        calls = {"n": 0}

        def flaky(arch):
            calls["n"] += 1
            if calls["n"] % 5 == 0:
                raise EvaluationFailed("injected")
            return noisy_surrogate(arch)

        cfg = EngineConfig(population=6, max_evaluations=40, seed=13)
        result = run(default_space, cfg, flaky)
        assert result.evaluations == 40
        assert any(i.scores is None for i in result.history)
        # a failed offspring never becomes the best
        assert result.best.scores is not None

    def test_population_size_invariant(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=9, max_evaluations=50, seed=14)
        sizes = []
        run(default_space, cfg, noisy_surrogate, on_generation=lambda s, r: sizes.append(len(s.population)))
        assert sizes == [9] * 50


class FakeDispatcher:
    """In-process dispatcher double: resolves jobs synchronously in order.

    ``script(job_no)`` can inject an error resolution or raise PoolEmptyError
    to emulate a drained worker pool.
    """

    def __init__(self, evaluator, script=None):
        from robustnas.dispatch import Resolution

        self._resolution = Resolution
        self.evaluator = evaluator
        self.script = script or (lambda n: None)
        self.counter = 0
        self.queue = []

    def submit(self, arch):
        action = self.script(self.counter)
        if action == "pool_empty":
            raise PoolEmptyError("no evaluation workers registered")
        job_id = f"job-{self.counter:06d}"
        self.counter += 1
        if action == "error":
            self.queue.append(
                self._resolution(job_id=job_id, scores=None, error="injected failure", worker_id="w0", attempts=1)
            )
        else:
            self.queue.append(
                self._resolution(job_id=job_id, scores=self.evaluator(arch), error=None, worker_id="w0", attempts=1)
            )
        return job_id

    def next_result(self, timeout=None):
        if not self.queue:
            raise PoolEmptyError("no evaluation workers registered")
        return self.queue.pop(0)


class TestRunAsync:
    def test_serial_async_matches_sync(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=10, max_evaluations=60, seed=21, evaluator="external")
        sync_cfg = EngineConfig(population=10, max_evaluations=60, seed=21)
        sync = run(default_space, sync_cfg, noisy_surrogate)

        dispatcher = FakeDispatcher(noisy_surrogate)
        state = init_population_async(default_space, cfg, dispatcher)
        result = run_async(default_space, cfg, dispatcher, state=state)
        assert [i.fitness for i in result.history] == [i.fitness for i in sync.history]
        assert canonical_hash(result.best.arch) == canonical_hash(sync.best.arch)

    def test_deep_pipeline_completes(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=12, max_evaluations=80, seed=22, evaluator="external", max_in_flight=6)
        dispatcher = FakeDispatcher(noisy_surrogate)
        state = init_population_async(default_space, cfg, dispatcher)
        result = run_async(default_space, cfg, dispatcher, state=state)
        assert result.evaluations == 80
        assert result.stop_reason == STOP_BUDGET
        assert len(state.population) == 12

    def test_error_resolutions_regenerate_during_init(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=8, seed=23, evaluator="external")
        dispatcher = FakeDispatcher(noisy_surrogate, script=lambda n: "error" if n in (2, 5) else None)
        state = init_population_async(default_space, cfg, dispatcher)
        assert len(state.population) == 8
        assert all(i.scores is not None for i in state.population.values())

    def test_pool_empty_is_resumable(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=6, max_evaluations=30, seed=24, evaluator="external")
        dispatcher = FakeDispatcher(noisy_surrogate, script=lambda n: "pool_empty" if n >= 16 else None)
        state = init_population_async(default_space, cfg, dispatcher)
        result = run_async(default_space, cfg, dispatcher, state=state)
        assert result.stop_reason == STOP_POOL_EMPTY
        assert result.evaluations < 30

        fresh = FakeDispatcher(noisy_surrogate)
        fresh.counter = dispatcher.counter
        finished = run_async(default_space, cfg, fresh, state=state)
        assert finished.stop_reason == STOP_BUDGET
        assert finished.evaluations == 30


class TestCheckpoint:
    def test_digest_ignores_stopping_knobs(self, default_space):
        base = EngineConfig(population=10, seed=3)
        same = EngineConfig(population=10, seed=3, patience=999, max_evaluations=5, max_in_flight=7)
        other = EngineConfig(population=10, seed=4)
        assert config_digest(default_space, base) == config_digest(default_space, same)
        assert config_digest(default_space, base) != config_digest(default_space, other)

    def test_digest_covers_weights_space_and_extra(self, default_space, restricted_space):
        cfg = EngineConfig(population=10, seed=3)
        reweighted = EngineConfig(population=10, seed=3, weights=FitnessWeights(2.0, 1.0, 2.0))
        assert config_digest(default_space, cfg) != config_digest(default_space, reweighted)
        assert config_digest(default_space, cfg) != config_digest(restricted_space, cfg)
        assert config_digest(default_space, cfg) != config_digest(default_space, cfg, extra={"k": 1})

    def test_individual_record_round_trip(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, seed=31)
        state = init_population(default_space, cfg, noisy_surrogate)
        for ind in state.population.values():
            assert individual_from_record(individual_to_record(ind)) == ind
        failed = ScoredIndividual(7, simplest(default_space), None, float("-inf"), 3, "w1")
        assert individual_from_record(individual_to_record(failed)) == failed

    def test_malformed_individual_rejected(self):
        with pytest.raises(CheckpointError):
            individual_from_record({"member_id": 0})

    def run_with_checkpoint(self, space, evaluator, total, cut, seed=40):
        full_cfg = EngineConfig(population=8, max_evaluations=total, patience=10_000, seed=seed)
        uninterrupted = run(space, full_cfg, evaluator)

        half_cfg = EngineConfig(population=8, max_evaluations=cut, patience=10_000, seed=seed)
        state = init_population(space, half_cfg, evaluator)
        first = run(space, half_cfg, evaluator, state=state)
        record = checkpoint_record(state, space, half_cfg)
        history_records = [individual_to_record(i) for i in state.history]

        resumed_state = restore_state(record, space, full_cfg, history_records)
        resumed = run(space, full_cfg, evaluator, state=resumed_state)
        return uninterrupted, first, resumed

    def test_resume_is_bitwise_identical(self, default_space, noisy_surrogate):
        uninterrupted, first, resumed = self.run_with_checkpoint(default_space, noisy_surrogate, 50, 20)
        assert len(first.history) == 8 + 20
        assert [i.fitness for i in resumed.history] == [i.fitness for i in uninterrupted.history]
        assert [canonical_hash(i.arch) for i in resumed.history] == [
            canonical_hash(i.arch) for i in uninterrupted.history
        ]
        assert canonical_hash(resumed.best.arch) == canonical_hash(uninterrupted.best.arch)
        assert resumed.best.fitness == uninterrupted.best.fitness

    def test_checksum_tamper_detected(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, seed=41)
        state = init_population(default_space, cfg, noisy_surrogate)
        record = checkpoint_record(state, default_space, cfg)
        tampered = json.loads(json.dumps(record))
        tampered["evaluations"] = 999
        with pytest.raises(CheckpointError, match="checksum"):
            restore_state(tampered, default_space, cfg, [])

    def test_format_tag_checked(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, seed=41)
        state = init_population(default_space, cfg, noisy_surrogate)
        record = checkpoint_record(state, default_space, cfg)
        record["format"] = "something-else"
        with pytest.raises(CheckpointError, match="format"):
            restore_state(record, default_space, cfg, [])

    def test_wrong_config_refused(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, seed=41)
        state = init_population(default_space, cfg, noisy_surrogate)
        record = checkpoint_record(state, default_space, cfg)
        history = [individual_to_record(i) for i in state.history]
        with pytest.raises(CheckpointError, match="refusing to resume"):
            restore_state(record, default_space, EngineConfig(population=5, seed=42), history)
        # stopping knobs may differ freely
        restore_state(record, default_space, EngineConfig(population=5, seed=41, max_evaluations=5000), history)

    def test_extra_payload_must_match(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, seed=43)
        state = init_population(default_space, cfg, noisy_surrogate)
        record = checkpoint_record(state, default_space, cfg, extra={"noise": 1})
        history = [individual_to_record(i) for i in state.history]
        restore_state(record, default_space, cfg, history, extra={"noise": 1})
        with pytest.raises(CheckpointError, match="refusing to resume"):
            restore_state(record, default_space, cfg, history, extra={"noise": 2})

    def test_excess_history_truncated(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, max_evaluations=10, patience=1000, seed=44)
        state = init_population(default_space, cfg, noisy_surrogate)
        run(default_space, cfg, noisy_surrogate, state=state)
        record = checkpoint_record(state, default_space, cfg)
        history = [individual_to_record(i) for i in state.history]
        extra_entry = dict(history[-1])
        extra_entry["member_id"] = 999
        restored = restore_state(record, default_space, cfg, history + [extra_entry])
        assert len(restored.history) == len(state.history)

    def test_restore_warms_the_cache(self, default_space, noisy_surrogate):
        cfg = EngineConfig(population=5, max_evaluations=10, patience=1000, seed=45)
        state = init_population(default_space, cfg, noisy_surrogate)
        run(default_space, cfg, noisy_surrogate, state=state)
        record = checkpoint_record(state, default_space, cfg)
        history = [individual_to_record(i) for i in state.history]
        restored = restore_state(record, default_space, cfg, history)
        assert len(restored.cache) > 0
