import json
import socket
import threading
import time

import pytest

from eval_worker.records import RecordError, parse_architecture
from eval_worker.service import WorkerService


class ScriptedEngine:
    """A hand-driven stand-in for the search engine's listening side."""

    def __init__(self):
        self.listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self.listener.bind(("127.0.0.1", 0))
        self.listener.listen(2)
        self.port = self.listener.getsockname()[1]
        self.conn = None
        self.reader = None

    def accept(self, timeout=10.0):
        self.listener.settimeout(timeout)
        self.conn, _ = self.listener.accept()
        self.conn.settimeout(10.0)
        self.reader = self.conn.makefile("rb")

    def send(self, message: dict):
        self.conn.sendall(json.dumps(message, separators=(",", ":")).encode("utf-8") + b"\n")

    def send_raw(self, data: bytes):
        self.conn.sendall(data)

    def read_line(self) -> bytes:
        line = self.reader.readline()
        assert line, "connection closed while a message was expected"
        return line

    def read_message(self) -> dict:
        return json.loads(self.read_line())

    def drop_connection(self):
        if self.conn is not None:
            try:
                self.conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            if self.reader is not None:
                self.reader.close()
                self.reader = None
            self.conn.close()
            self.conn = None

    def close(self):
        self.drop_connection()
        self.listener.close()


class CountingEvaluator:
    def __init__(self):
        self.calls = []

    def __call__(self, arch, eval_config):
        self.calls.append((arch, eval_config))
        try:
            parse_architecture(arch)
        except RecordError as exc:
            return {"status": "error", "error_message": f"invalid architecture record: {exc}"}
        return {
            "status": "ok",
            "accuracy_pct": 88.5,
            "robustness_pct": 61.0,
            "param_count": 115202,
        }


@pytest.fixture()
def engine():
    engine = ScriptedEngine()
    yield engine
    engine.close()


def _start_worker(engine, evaluator, **kwargs):
    kwargs.setdefault("backoff_base", 0.05)
    service = WorkerService("127.0.0.1", engine.port, "worker-under-test", evaluator, **kwargs)
    outcome = {}
    thread = threading.Thread(target=lambda: outcome.update(code=service.run()), daemon=True)
    thread.start()
    return service, thread, outcome


def _shutdown(service, thread, outcome):
    service.stop()
    thread.join(timeout=10)
    assert not thread.is_alive()
    return outcome.get("code")


def test_hello_eval_result_round_trip(engine, simplest_record):
    evaluator = CountingEvaluator()
    service, thread, outcome = _start_worker(engine, evaluator)
    try:
        engine.accept()
        hello = engine.read_message()
        assert hello["type"] == "hello"
        assert hello["worker_id"] == "worker-under-test"
        assert isinstance(hello["capabilities"], dict)

        engine.send(
            {"type": "eval", "job_id": "job-1", "arch": simplest_record, "eval_config": {"epochs": 2}}
        )
        result = engine.read_message()
        assert result == {
            "type": "result",
            "job_id": "job-1",
            "status": "ok",
            "accuracy_pct": 88.5,
            "robustness_pct": 61.0,
            "param_count": 115202,
        }
        assert evaluator.calls[0][1] == {"epochs": 2}
    finally:
        assert _shutdown(service, thread, outcome) == 0


def test_duplicate_job_id_is_idempotent(engine, simplest_record):
    evaluator = CountingEvaluator()
    service, thread, outcome = _start_worker(engine, evaluator)
    try:
        engine.accept()
        engine.read_message()  # hello
        job = {"type": "eval", "job_id": "job-7", "arch": simplest_record, "eval_config": {}}
        engine.send(job)
        first = engine.read_line()
        engine.send(job)
        second = engine.read_line()
        assert first == second  # byte-for-byte re-send of the cached result
        assert len(evaluator.calls) == 1  # the evaluation itself ran once
    finally:
        _shutdown(service, thread, outcome)


def test_ping_is_answered_with_matching_nonce(engine):
    service, thread, outcome = _start_worker(engine, CountingEvaluator())
    try:
        engine.accept()
        engine.read_message()  # hello
        engine.send({"type": "ping", "nonce": "n-42"})
        assert engine.read_message() == {"type": "pong", "nonce": "n-42"}
    finally:
        _shutdown(service, thread, outcome)


def test_bad_job_and_garbage_do_not_kill_the_session(engine, simplest_record):
    evaluator = CountingEvaluator()
    service, thread, outcome = _start_worker(engine, evaluator)
    try:
        engine.accept()
        engine.read_message()  # hello
        engine.send({"type": "eval", "job_id": "bad-1", "arch": {"repeats": 3}, "eval_config": {}})
        result = engine.read_message()
        assert result["status"] == "error"
        assert "invalid architecture record" in result["error_message"]

        engine.send_raw(b"this is not json\n")
        engine.send({"type": "eval", "job_id": "good-1", "arch": simplest_record, "eval_config": {}})
        result = engine.read_message()
        assert result["job_id"] == "good-1" and result["status"] == "ok"
    finally:
        _shutdown(service, thread, outcome)


def test_worker_reconnects_after_losing_the_engine(engine):
    service, thread, outcome = _start_worker(engine, CountingEvaluator())
    try:
        engine.accept()
        assert engine.read_message()["type"] == "hello"
        engine.drop_connection()
        engine.accept()  # the worker comes back on its own
        assert engine.read_message()["type"] == "hello"
        assert service.sessions == 2
    finally:
        assert _shutdown(service, thread, outcome) == 0


def test_gives_up_after_exhausting_reconnect_attempts():
    # grab a port with no listener behind it
    probe = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    probe.bind(("127.0.0.1", 0))
    port = probe.getsockname()[1]
    probe.close()

    service = WorkerService(
        "127.0.0.1", port, "w", lambda a, c: {"status": "ok"},
        reconnect_attempts=2, backoff_base=0.01, connect_timeout=0.5,
    )
    started = time.monotonic()
    assert service.run() == 1
    assert time.monotonic() - started < 10.0


def test_unknown_message_types_are_ignored(engine):
    service, thread, outcome = _start_worker(engine, CountingEvaluator())
    try:
        engine.accept()
        engine.read_message()  # hello
        engine.send({"type": "drain"})
        engine.send({"type": "ping", "nonce": "still-alive"})
        assert engine.read_message() == {"type": "pong", "nonce": "still-alive"}
    finally:
        _shutdown(service, thread, outcome)
