"""Acceptance suite: one printed pass/fail line per criterion.

Run with plain pytest; the verdict lines bypass output capture so they are
visible in any mode:

    [acceptance] evolution-closure: PASS
    ...
"""

import contextlib
import math
import random
import statistics
import time

from robustnas.analysis import PROPERTIES, group_stats, property_value
from robustnas.arch import (
    ModelShapeConfig,
    count_params_breakdown,
    from_record,
    parse,
    serialize,
)
from robustnas.dispatch import DEFAULT_RETRY_CAP, Dispatcher, JobTable
from robustnas.engine import (
    STOP_BUDGET,
    EngineConfig,
    init_population_async,
    run,
    run_async,
)
from robustnas.evolution import distance, epsilon, evolve
from robustnas.fitness import EvalScores, FitnessWeights, SurrogateConfig, aggregate, make_surrogate
from robustnas.space import DEFAULT_SPACE, contains, enumerate_restricted, sample

from stub_worker import StubWorker


@contextlib.contextmanager
def reported(capsys, name):
    try:
        yield
    except BaseException:
        with capsys.disabled():
            print(f"[acceptance] {name}: FAIL", flush=True)
        raise
    else:
        with capsys.disabled():
            print(f"[acceptance] {name}: PASS", flush=True)


def test_evolution_closure(capsys):
    """10,000 seeded mutations: all in-space, all 0 < d < 6, under 10 s."""
    with reported(capsys, "evolution-closure"):
        eps = epsilon(DEFAULT_SPACE.n)
        assert eps == 6
        parents = [sample(DEFAULT_SPACE, seed) for seed in range(1000)]
        started = time.perf_counter()
        for i in range(10_000):
            parent = parents[i % len(parents)]
            child, op, repairs = evolve(parent, DEFAULT_SPACE, i)
            assert contains(DEFAULT_SPACE, child), (i, op, repairs)
            d = distance(parent, child)
            assert 0 < d < eps, (i, d, op)
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"closure sweep took {elapsed:.2f}s"


def test_parameter_count_oracle(capsys, param_fixture_cases):
    """Analytic counts equal the frozen reference-framework counts exactly."""
    with reported(capsys, "parameter-count-oracle"):
        assert len(param_fixture_cases) >= 10
        for case in param_fixture_cases:
            shape = ModelShapeConfig(**case["shape"])
            got = count_params_breakdown(from_record(case["arch"]), shape)
            assert got == case["expected"], case["name"]


def test_restricted_space_optimality(capsys, restricted_space):
    """>= 18/20 seeded runs land on the brute-force optimum in 2,000 evals."""
    with reported(capsys, "restricted-space-optimality"):
        started = time.perf_counter()
        evaluator = make_surrogate(SurrogateConfig(noise_amplitude=0.0))
        weights = FitnessWeights()

        members = list(enumerate_restricted(restricted_space))
        assert len(members) <= 10_000
        best_fitness = max(aggregate(evaluator(a), weights) for a in members)

        hits = 0
        for seed in range(20):
            cfg = EngineConfig(population=100, max_evaluations=1900, patience=1900, seed=seed)
            result = run(restricted_space, cfg, evaluator)
            assert result.evaluations + cfg.population <= 2000
            hits += result.best.fitness == best_fitness
        elapsed = time.perf_counter() - started
        assert hits >= 18, f"{hits}/20 seeds found the optimum"
        assert elapsed < 120.0, f"optimality sweep took {elapsed:.1f}s"


def test_monotone_best(capsys, noisy_surrogate):
    """Best-so-far never decreases, across seeds: zero violations."""
    with reported(capsys, "monotone-best"):
        violations = 0
        for seed in range(10):
            cfg = EngineConfig(population=12, max_evaluations=300, patience=10_000, seed=seed)
            bests = []
            run(DEFAULT_SPACE, cfg, noisy_surrogate, on_generation=lambda s, r: bests.append(r.best_fitness))
            violations += sum(1 for a, b in zip(bests, bests[1:]) if b < a)
        assert violations == 0


def test_fitness_arithmetic(capsys):
    """84.1 acc, 45.8 rob, 24M params at weights (1,1,2) -> 81.9 within 1e-9."""
    with reported(capsys, "fitness-arithmetic"):
        fitness = aggregate(EvalScores(84.1, 45.8, 24_000_000), FitnessWeights(1.0, 1.0, 2.0))
        assert abs(fitness - 81.9) <= 1e-9


def test_serialization_identity(capsys):
    """10,000 sampled architectures survive a byte-identical round trip."""
    with reported(capsys, "serialization-identity"):
        for seed in range(10_000):
            arch = sample(DEFAULT_SPACE, seed)
            text = serialize(arch)
            again = serialize(parse(text))
            assert again == text, seed


class TestFaultTolerance:
    def test_exactly_once_over_fault_storm(self, capsys):
        """1,000+ injected faults at the job table: one resolution per job."""
        with reported(capsys, "fault-tolerance-exactly-once"):
            rng = random.Random(99)
            resolved = []
            table = JobTable(retry_cap=DEFAULT_RETRY_CAP, sink=resolved.append)
            arch = sample(DEFAULT_SPACE, 0)
            scores = EvalScores(55.0, 44.0, 1234)

            jobs = []
            faults = 0
            while faults < 1000 and len(jobs) < 3000:
                job_id = f"job-{len(jobs):05d}"
                jobs.append(job_id)
                table.add(job_id, arch)
                strikes = 0
                while True:
                    assert table.take_ready() is not None
                    table.mark_assigned(job_id, "w0", deadline=time.monotonic() + 60)
                    event = rng.choice(["ok", "dup", "late-dup", "error", "timeout", "death"])
                    if event == "ok":
                        table.resolve_ok(job_id, scores, "w0")
                        break
                    if event in ("dup", "late-dup"):
                        table.resolve_ok(job_id, scores, "w0")
                        table.resolve_ok(job_id, scores, "w1")  # duplicate: a fault
                        faults += 1
                        break
                    faults += 1  # error/timeout/death all strike the job
                    table.fail_event(job_id, event, "w0")
                    strikes += 1
                    if strikes == DEFAULT_RETRY_CAP:
                        table.resolve_ok(job_id, scores, "w9")  # late result: a fault
                        faults += 1
                        break

            assert faults >= 1000, f"only {faults} faults injected"
            assert len(resolved) == len(jobs)
            assert {r.job_id for r in resolved} == set(jobs)
            assert sorted(r.job_id for r in resolved) == sorted(set(r.job_id for r in resolved))

    def test_search_completes_under_injected_faults(self, capsys, noisy_surrogate):
        """A 500-evaluation search finishes despite kills/timeouts/duplicates."""
        with reported(capsys, "fault-tolerance-search"):
            cfg = EngineConfig(
                population=20,
                max_evaluations=480,
                patience=10_000,
                seed=17,
                evaluator="external",
                max_in_flight=8,
            )
            with Dispatcher(job_timeout=5.0, ping_interval=1.0) as dispatcher:
                address = dispatcher.addresses[0]
                workers = [
                    StubWorker(address, "steady").start(),
                    StubWorker(address, "doubler", duplicate_results=True).start(),
                    StubWorker(address, "stumbler", error_first_sight=True).start(),
                    StubWorker(address, "mortal-0", die_on_job=30).start(),
                ]
                try:
                    assert dispatcher.wait_for_workers(4, timeout=5)
                    state = init_population_async(DEFAULT_SPACE, cfg, dispatcher)

                    mortals = 1

                    def respawn(_state, _report):
                        # keep one crash-prone worker in rotation
                        nonlocal mortals
                        if dispatcher.worker_count < 4:
                            workers.append(
                                StubWorker(address, f"mortal-{mortals}", die_on_job=30).start()
                            )
                            mortals += 1

                    result = run_async(DEFAULT_SPACE, cfg, dispatcher, state=state, on_generation=respawn)
                finally:
                    for worker in workers:
                        worker.stop()

            assert result.stop_reason == STOP_BUDGET
            assert result.evaluations == 480
            assert len(result.history) == 20 + 480
            assert len(state.population) == 20
            # the search made real progress despite the churn
            assert result.best.scores is not None


def test_statistics_partition(capsys, noisy_surrogate):
    """Group counts partition the history; stats match a two-pass oracle."""
    with reported(capsys, "statistics-partition"):
        for seed in (1, 2, 3):
            cfg = EngineConfig(population=15, max_evaluations=200, patience=10_000, seed=seed)
            history = list(run(DEFAULT_SPACE, cfg, noisy_surrogate).history)
            history = [h for h in history if h.scores is not None]
            for prop in PROPERTIES:
                rows = group_stats(history, prop)
                assert sum(r.sample_count for r in rows) == len(history)

                buckets = {}
                for ind in history:
                    buckets.setdefault(property_value(prop, ind.arch), []).append(ind)
                assert {r.key for r in rows} == set(buckets)
                for row in rows:
                    accs = [i.scores.accuracy_pct for i in buckets[row.key]]
                    robs = [i.scores.robustness_pct for i in buckets[row.key]]
                    assert math.isclose(row.mean_accuracy_pct, statistics.fmean(accs), rel_tol=1e-9)
                    assert math.isclose(row.mean_robustness_pct, statistics.fmean(robs), rel_tol=1e-9)
                    assert math.isclose(
                        row.std_accuracy_pct, statistics.pstdev(accs), rel_tol=1e-9, abs_tol=1e-12
                    )
                    assert math.isclose(
                        row.std_robustness_pct, statistics.pstdev(robs), rel_tol=1e-9, abs_tol=1e-12
                    )
