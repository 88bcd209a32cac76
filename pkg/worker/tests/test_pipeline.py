import contextlib
import time

from eval_worker.evaluation import evaluate_record


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


def test_toy_pipeline_acceptance(capsys, context, simplest_record, pilot):
    """Full evaluation of the plainest architecture: distillation must reach
    the recorded accuracy threshold, the attack must cost it something, and
    one evaluation must finish within the ten-minute budget."""
    with reported(capsys, "worker-toy-pipeline"):
        started = time.monotonic()
        result = evaluate_record(context, simplest_record)
        elapsed = time.monotonic() - started

        assert result["status"] == "ok", result
        assert result["accuracy_pct"] >= pilot["accuracy_threshold_pct"], result
        assert result["robustness_pct"] < result["accuracy_pct"], result
        assert elapsed < 600.0, f"evaluation took {elapsed:.1f}s"
        assert result["param_count"] == pilot["pilot"]["param_count"]


def test_repeat_evaluation_is_bit_identical(context, simplest_record):
    eval_config = {"epochs": 2, "robustness_samples": 40, "seed": 7}
    first = evaluate_record(context, simplest_record, eval_config)
    second = evaluate_record(context, simplest_record, eval_config)
    assert first["status"] == "ok"
    assert first == second


def test_invalid_record_becomes_an_error_payload(context):
    result = evaluate_record(context, {"repeats": 3})
    assert result["status"] == "error"
    assert "invalid architecture record" in result["error_message"]


def test_unschema_record_type_becomes_an_error_payload(context):
    result = evaluate_record(context, "not-a-record")
    assert result["status"] == "error"


def test_teacher_clears_the_task(context):
    """The distillation targets are only meaningful if the teacher actually
    solved the corpus, including its order-sensitive half."""
    assert context.bundle.eval_accuracy_pct >= 95.0
    assert context.bundle.num_layers <= 4
