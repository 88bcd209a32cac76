"""Scripted protocol workers for dispatcher tests and fault injection.

Each StubWorker is one TCP client speaking the newline-delimited JSON
protocol.  Behavior knobs cover the fault matrix: never answering
(black hole), dying on receipt of a job, duplicating results, erroring,
misreporting parameter counts, and spraying garbage or unknown messages.
"""

from __future__ import annotations

import json
import socket
import threading

from robustnas.arch import from_record
from robustnas.fitness import DEFAULT_SURROGATE, surrogate_eval


def surrogate_scores(arch_record: dict) -> tuple[float, float, int]:
    scores = surrogate_eval(from_record(arch_record), DEFAULT_SURROGATE)
    return scores.accuracy_pct, scores.robustness_pct, scores.param_count


class StubWorker:
    def __init__(
        self,
        address: tuple[str, int],
        worker_id: str,
        *,
        evaluator=surrogate_scores,
        black_hole: bool = False,
        die_on_job: int | None = None,
        error_first_sight: bool = False,
        always_error: bool = False,
        duplicate_results: bool = False,
        param_count_offset: int = 0,
        report_params: bool = True,
        answer_pings: bool = True,
        preamble_lines: tuple[str, ...] = (),
        latency_s: float = 0.0,
    ):
        self.address = address
        self.worker_id = worker_id
        self.evaluator = evaluator
        self.black_hole = black_hole
        self.die_on_job = die_on_job
        self.error_first_sight = error_first_sight
        self.always_error = always_error
        self.duplicate_results = duplicate_results
        self.param_count_offset = param_count_offset
        self.report_params = report_params
        self.answer_pings = answer_pings
        self.preamble_lines = preamble_lines
        self.latency_s = latency_s

        self.jobs_received = 0
        self.results_sent = 0
        self.seen_job_ids: set[str] = set()
        self._sock: socket.socket | None = None
        self._lock = threading.Lock()
        self._thread = threading.Thread(target=self._serve, daemon=True)

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> "StubWorker":
        self._thread.start()
        return self

    def stop(self) -> None:
        with self._lock:
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None
        self._thread.join(timeout=5)

    def __enter__(self) -> "StubWorker":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()

    # -- protocol ----------------------------------------------------------

    def _send(self, message: dict) -> None:
        data = (json.dumps(message, separators=(",", ":")) + "\n").encode("utf-8")
        with self._lock:
            if self._sock is None:
                raise OSError("worker socket closed")
            self._sock.sendall(data)

    def _send_raw(self, line: str) -> None:
        with self._lock:
            if self._sock is None:
                raise OSError("worker socket closed")
            self._sock.sendall(line.encode("utf-8"))

    def _hang_up(self) -> None:
        with self._lock:
            if self._sock is not None:
                try:
                    self._sock.close()
                except OSError:
                    pass
                self._sock = None

    def _serve(self) -> None:
        try:
            sock = socket.create_connection(self.address, timeout=5)
        except OSError:
            return
        with self._lock:
            self._sock = sock
        reader = sock.makefile("r", encoding="utf-8", newline="\n")
        try:
            self._send({"type": "hello", "worker_id": self.worker_id, "capabilities": {"stub": True}})
            for line in self.preamble_lines:
                self._send_raw(line)
            while True:
                line = reader.readline()
                if not line:
                    return
                try:
                    message = json.loads(line)
                except json.JSONDecodeError:
                    continue
                self._dispatch(message)
        except OSError:
            return
        finally:
            self._hang_up()

    def _dispatch(self, message: dict) -> None:
        mtype = message.get("type")
        if mtype == "ping":
            if self.answer_pings:
                self._send({"type": "pong", "nonce": message.get("nonce")})
            return
        if mtype != "eval":
            return

        self.jobs_received += 1
        job_id = message["job_id"]
        if self.die_on_job is not None and self.jobs_received >= self.die_on_job:
            self._hang_up()
            return
        if self.black_hole:
            return
        if self.latency_s:
            import time

            time.sleep(self.latency_s)

        first_sight = job_id not in self.seen_job_ids
        self.seen_job_ids.add(job_id)
        if self.always_error or (self.error_first_sight and first_sight):
            result = {
                "type": "result",
                "job_id": job_id,
                "status": "error",
                "error_message": "scripted failure",
            }
        else:
            acc, rob, params = self.evaluator(message["arch"])
            result = {
                "type": "result",
                "job_id": job_id,
                "status": "ok",
                "accuracy_pct": acc,
                "robustness_pct": rob,
            }
            if self.report_params:
                result["param_count"] = params + self.param_count_offset
        try:
            self._send(result)
            self.results_sent += 1
            if self.duplicate_results:
                self._send(result)
        except OSError:
            pass
