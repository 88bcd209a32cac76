"""Engine side of the worker protocol.

Workers connect over TCP and speak newline-delimited JSON: a ``hello`` on
connect, then ``eval``/``result`` pairs, with ``ping``/``pong`` liveness
probes in between.  Unknown message types are ignored with a log entry.

The job table guarantees exactly-once resolution: whatever mix of timeouts,
requeues, duplicate results, and worker deaths occurs, each submitted job
produces exactly one engine-visible outcome.  The engine's analytic
parameter count is authoritative; a worker-reported count is only
cross-checked.
"""

from __future__ import annotations

import json
import logging
import queue
import socket
import threading
import time
import uuid
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .arch import Architecture, ModelShapeConfig, count_params, to_record
from .errors import DispatchError, PoolEmptyError
from .fitness import EvalScores

__all__ = [
    "encode_message",
    "decode_message",
    "Resolution",
    "JobTable",
    "Dispatcher",
    "DEFAULT_JOB_TIMEOUT_S",
    "DEFAULT_RETRY_CAP",
]

logger = logging.getLogger("robustnas.dispatch")

# Real distillation jobs are minutes-long; the test harness overrides this
# with seconds.
DEFAULT_JOB_TIMEOUT_S = 30.0 * 60.0
DEFAULT_RETRY_CAP = 3
DEFAULT_PING_INTERVAL_S = 60.0

_POOL_EMPTY = object()  # sentinel on the completion queue


# ---------------------------------------------------------------------------
# Wire format
# ---------------------------------------------------------------------------

def encode_message(message: dict) -> bytes:
    """One protocol message as a single JSON line."""
    if "type" not in message:
        raise DispatchError("message lacks a 'type' field")
    return json.dumps(message, separators=(",", ":")).encode("utf-8") + b"\n"


def decode_message(line: bytes | str) -> dict:
    """Inverse of :func:`encode_message`; malformed input raises DispatchError."""
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        message = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DispatchError(f"malformed protocol line: {exc.msg}") from exc
    if not isinstance(message, dict) or not isinstance(message.get("type"), str):
        raise DispatchError("protocol message must be an object with a string 'type'")
    return message


def _valid_pct(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and 0.0 <= value <= 100.0


# ---------------------------------------------------------------------------
# Job state
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resolution:
    """Exactly-once outcome of one job, as the engine sees it."""

    job_id: str
    scores: Optional[EvalScores]  # None => failure
    error: Optional[str]
    worker_id: Optional[str]
    attempts: int
    param_mismatch: bool = False


@dataclass
class _Job:
    job_id: str
    arch: Architecture
    failures: int = 0
    attempts: int = 0
    resolved: bool = False
    assigned_to: Optional[str] = None
    deadline: Optional[float] = None


class JobTable:
    """Synchronized job store with single-resolution semantics.

    All transitions happen under one lock; a job resolves at most once no
    matter how results, timeouts, and failure events interleave.  Resolutions
    are emitted through `sink` (the dispatcher's completion queue).
    """

    def __init__(self, retry_cap: int = DEFAULT_RETRY_CAP, sink: Optional[Callable[[Resolution], None]] = None):
        if retry_cap < 1:
            raise DispatchError(f"retry_cap must be >= 1, got {retry_cap}")
        self.retry_cap = retry_cap
        self._sink = sink or (lambda r: None)
        self._lock = threading.Lock()
        self._jobs: dict[str, _Job] = {}
        self._ready: deque[str] = deque()

    def add(self, job_id: str, arch: Architecture) -> None:
        with self._lock:
            if job_id in self._jobs:
                raise DispatchError(f"duplicate job_id {job_id!r}")
            self._jobs[job_id] = _Job(job_id=job_id, arch=arch)
            self._ready.append(job_id)

    def job(self, job_id: str) -> Optional[_Job]:
        with self._lock:
            return self._jobs.get(job_id)

    @property
    def outstanding(self) -> int:
        with self._lock:
            return sum(1 for j in self._jobs.values() if not j.resolved)

    @property
    def ready_count(self) -> int:
        with self._lock:
            return sum(1 for jid in self._ready if not self._jobs[jid].resolved)

    def take_ready(self) -> Optional[_Job]:
        """Pop the next unresolved queued job, or None."""
        with self._lock:
            while self._ready:
                jid = self._ready.popleft()
                job = self._jobs[jid]
                if not job.resolved:
                    return job
            return None

    def mark_assigned(self, job_id: str, worker_id: str, deadline: float) -> None:
        with self._lock:
            job = self._jobs[job_id]
            job.assigned_to = worker_id
            job.deadline = deadline
            job.attempts += 1

    def push_back(self, job_id: str) -> None:
        """Return a taken-but-unassigned job to the front of the queue."""
        with self._lock:
            job = self._jobs[job_id]
            job.assigned_to = None
            job.deadline = None
            if not job.resolved:
                self._ready.appendleft(job_id)

    def resolve_ok(
        self, job_id: str, scores: EvalScores, worker_id: str, param_mismatch: bool = False
    ) -> Optional[Resolution]:
        """First successful result wins; later copies are discarded with a log."""
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                logger.warning("result for unknown job %s discarded", job_id)
                return None
            if job.resolved:
                logger.info("duplicate result for job %s discarded", job_id)
                return None
            job.resolved = True
            job.assigned_to = None
            resolution = Resolution(
                job_id=job_id,
                scores=scores,
                error=None,
                worker_id=worker_id,
                attempts=job.attempts,
                param_mismatch=param_mismatch,
            )
        self._sink(resolution)
        return resolution

    def fail_event(self, job_id: str, reason: str, worker_id: Optional[str]) -> Optional[Resolution]:
        """One failure strike (error result, timeout, or worker death).

        Below the retry cap the job is requeued at the front; at the cap it
        resolves as a failure.  Resolved jobs ignore further strikes.
        """
        with self._lock:
            job = self._jobs.get(job_id)
            if job is None:
                logger.warning("failure event for unknown job %s ignored (%s)", job_id, reason)
                return None
            if job.resolved:
                logger.info("failure event for resolved job %s ignored (%s)", job_id, reason)
                return None
            job.failures += 1
            job.assigned_to = None
            job.deadline = None
            if job.failures < self.retry_cap:
                logger.warning(
                    "job %s failed (%s), retry %d/%d", job_id, reason, job.failures, self.retry_cap - 1
                )
                self._ready.appendleft(job_id)
                return None
            job.resolved = True
            resolution = Resolution(
                job_id=job_id,
                scores=None,
                error=f"gave up after {job.failures} failures; last: {reason}",
                worker_id=worker_id,
                attempts=job.attempts,
            )
        logger.error("job %s resolved as failure: %s", job_id, resolution.error)
        self._sink(resolution)
        return resolution

    def timed_out(self, now: float) -> list[str]:
        with self._lock:
            return [
                j.job_id
                for j in self._jobs.values()
                if not j.resolved and j.assigned_to is not None and j.deadline is not None and j.deadline < now
            ]


# ---------------------------------------------------------------------------
# Socket layer
# ---------------------------------------------------------------------------

@dataclass
class _WorkerConn:
    worker_id: str
    sock: socket.socket
    capabilities: dict
    state: str = "idle"  # idle | busy | suspect
    current_job: Optional[str] = None
    send_lock: threading.Lock = field(default_factory=threading.Lock)
    last_ping_sent: float = 0.0
    pending_nonce: Optional[str] = None
    pending_since: float = 0.0


class Dispatcher:
    """Listens for workers, assigns queued jobs FIFO, supervises liveness.

    The engine drives it through :meth:`submit` and :meth:`next_result`;
    everything else runs on background threads.  ``clock`` is injectable for
    tests that fake time (supervision runs off ``scan_once``).
    """

    def __init__(
        self,
        listen: Sequence[tuple[str, int]] = (("127.0.0.1", 0),),
        shape: ModelShapeConfig = ModelShapeConfig(),
        eval_config: Optional[dict] = None,
        job_timeout: float = DEFAULT_JOB_TIMEOUT_S,
        retry_cap: int = DEFAULT_RETRY_CAP,
        ping_interval: float = DEFAULT_PING_INTERVAL_S,
        ping_timeout: Optional[float] = None,
        pool_empty_grace: Optional[float] = None,
        clock: Callable[[], float] = time.monotonic,
        start: bool = True,
    ):
        if job_timeout <= 0:
            raise DispatchError(f"job_timeout must be positive, got {job_timeout}")
        self.shape = shape
        self.eval_config = dict(eval_config or {})
        self.job_timeout = job_timeout
        self.ping_interval = ping_interval
        self.ping_timeout = ping_timeout if ping_timeout is not None else 2.0 * ping_interval
        self.pool_empty_grace = pool_empty_grace if pool_empty_grace is not None else job_timeout
        self.clock = clock

        self._completions: "queue.Queue" = queue.Queue()
        self.table = JobTable(retry_cap=retry_cap, sink=self._completions.put)
        self._lock = threading.RLock()
        self._workers: dict[str, _WorkerConn] = {}
        self._job_counter = 0
        self._closing = threading.Event()
        self._empty_since: Optional[float] = None
        self._empty_surfaced = False
        self.mismatch_count = 0

        self._servers: list[socket.socket] = []
        for host, port in listen:
            srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            srv.bind((host, port))
            srv.listen(64)
            self._servers.append(srv)

        self._threads: list[threading.Thread] = []
        if start:
            for srv in self._servers:
                t = threading.Thread(target=self._accept_loop, args=(srv,), daemon=True)
                t.start()
                self._threads.append(t)
            t = threading.Thread(target=self._supervise_loop, daemon=True)
            t.start()
            self._threads.append(t)

    # -- engine-facing API --------------------------------------------------

    @property
    def addresses(self) -> list[tuple[str, int]]:
        return [srv.getsockname() for srv in self._servers]

    @property
    def worker_count(self) -> int:
        with self._lock:
            return len(self._workers)

    def wait_for_workers(self, count: int = 1, timeout: float = 30.0) -> bool:
        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            if self.worker_count >= count:
                return True
            time.sleep(0.02)
        return self.worker_count >= count

    def submit(self, arch: Architecture) -> str:
        """Queue an evaluation; fails immediately when no worker is registered."""
        with self._lock:
            if not self._workers:
                raise PoolEmptyError("no evaluation workers registered")
            self._job_counter += 1
            job_id = f"job-{self._job_counter:06d}"
        self.table.add(job_id, arch)
        self._pump()
        return job_id

    def next_result(self, timeout: Optional[float] = None) -> Resolution:
        """Block for the next completed job, in completion order.

        Raises PoolEmptyError when total worker loss has been detected with
        work still outstanding, and TimeoutError on `timeout`.
        """
        deadline = None if timeout is None else self.clock() + timeout
        while True:
            remaining = None if deadline is None else max(0.0, deadline - self.clock())
            try:
                item = self._completions.get(timeout=remaining)
            except queue.Empty:
                raise TimeoutError("no evaluation result arrived in time") from None
            if item is _POOL_EMPTY:
                # stale alarm: a worker may have registered after the
                # supervisor queued the sentinel
                with self._lock:
                    if self._workers:
                        continue
                raise PoolEmptyError("all evaluation workers are gone; jobs cannot complete")
            return item

    def close(self) -> None:
        self._closing.set()
        for srv in self._servers:
            try:
                srv.close()
            except OSError:
                pass
        with self._lock:
            conns = list(self._workers.values())
            self._workers.clear()
        for conn in conns:
            try:
                conn.sock.close()
            except OSError:
                pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- socket plumbing ----------------------------------------------------

    def _accept_loop(self, srv: socket.socket) -> None:
        while not self._closing.is_set():
            try:
                conn, addr = srv.accept()
            except OSError:
                return
            threading.Thread(target=self._serve_conn, args=(conn, addr), daemon=True).start()

    def _serve_conn(self, sock: socket.socket, addr) -> None:
        sock.settimeout(30.0)
        reader = sock.makefile("rb")
        try:
            line = reader.readline()
        except OSError:
            sock.close()
            return
        try:
            hello = decode_message(line) if line else None
        except DispatchError as exc:
            logger.warning("rejecting connection from %s: %s", addr, exc)
            sock.close()
            return
        if not hello or hello.get("type") != "hello" or not isinstance(hello.get("worker_id"), str):
            logger.warning("rejecting connection from %s: expected hello", addr)
            sock.close()
            return
        worker_id = hello["worker_id"]
        capabilities = hello.get("capabilities")
        worker = _WorkerConn(
            worker_id=worker_id,
            sock=sock,
            capabilities=capabilities if isinstance(capabilities, dict) else {},
        )
        with self._lock:
            if worker_id in self._workers:
                logger.warning("duplicate worker id %r rejected", worker_id)
                sock.close()
                return
            self._workers[worker_id] = worker
            self._empty_since = None
            self._empty_surfaced = False
        logger.info("worker %s connected from %s", worker_id, addr)
        sock.settimeout(None)
        self._pump()
        self._read_loop(worker, reader)

    def _read_loop(self, worker: _WorkerConn, reader) -> None:
        while not self._closing.is_set():
            try:
                line = reader.readline()
            except OSError:
                break
            if not line:
                break
            try:
                message = decode_message(line)
            except DispatchError as exc:
                logger.warning("worker %s sent garbage: %s", worker.worker_id, exc)
                continue
            self._handle_message(worker, message)
        self._worker_died(worker.worker_id, "connection closed")

    def _send(self, worker: _WorkerConn, message: dict) -> bool:
        try:
            with worker.send_lock:
                worker.sock.sendall(encode_message(message))
            return True
        except OSError as exc:
            logger.warning("send to worker %s failed: %s", worker.worker_id, exc)
            return False

    def _handle_message(self, worker: _WorkerConn, message: dict) -> None:
        mtype = message["type"]
        if mtype == "result":
            self._handle_result(worker, message)
        elif mtype == "pong":
            with self._lock:
                if message.get("nonce") == worker.pending_nonce:
                    worker.pending_nonce = None
                if worker.state == "suspect" and worker.current_job is None:
                    worker.state = "idle"
            self._pump()
        elif mtype == "ping":
            self._send(worker, {"type": "pong", "nonce": message.get("nonce", "")})
        elif mtype == "hello":
            logger.info("worker %s re-sent hello; ignored", worker.worker_id)
        else:
            logger.warning("unknown message type %r from worker %s ignored", mtype, worker.worker_id)

    def _handle_result(self, worker: _WorkerConn, message: dict) -> None:
        job_id = message.get("job_id")
        if not isinstance(job_id, str):
            logger.warning("result without job_id from worker %s ignored", worker.worker_id)
            return
        with self._lock:
            # A suspect worker that answers is alive again.
            if worker.current_job == job_id:
                worker.current_job = None
            if worker.state in ("busy", "suspect"):
                worker.state = "idle"

        job = self.table.job(job_id)
        status = message.get("status")
        if status == "ok":
            acc = message.get("accuracy_pct")
            rob = message.get("robustness_pct")
            if not (_valid_pct(acc) and _valid_pct(rob)):
                self.table.fail_event(
                    job_id,
                    f"worker {worker.worker_id} reported out-of-range scores ({acc!r}, {rob!r})",
                    worker.worker_id,
                )
            else:
                mismatch = False
                if job is not None:
                    engine_count = count_params(job.arch, self.shape)
                    reported = message.get("param_count")
                    if reported is not None and reported != engine_count:
                        mismatch = True
                        self.mismatch_count += 1
                        logger.warning(
                            "worker %s counted %s parameters for job %s, engine counts %d;"
                            " using the engine value",
                            worker.worker_id,
                            reported,
                            job_id,
                            engine_count,
                        )
                    scores = EvalScores(
                        accuracy_pct=float(acc), robustness_pct=float(rob), param_count=engine_count
                    )
                    self.table.resolve_ok(job_id, scores, worker.worker_id, param_mismatch=mismatch)
                else:
                    logger.warning("result for unknown job %s discarded", job_id)
        elif status == "error":
            self.table.fail_event(
                job_id,
                f"worker {worker.worker_id} error: {message.get('error_message', 'unspecified')}",
                worker.worker_id,
            )
        else:
            logger.warning("result with unknown status %r from %s ignored", status, worker.worker_id)
        self._pump()

    def _worker_died(self, worker_id: str, reason: str) -> None:
        with self._lock:
            worker = self._workers.pop(worker_id, None)
            if worker is None:
                return
            stale_job = worker.current_job
        try:
            worker.sock.close()
        except OSError:
            pass
        logger.warning("worker %s deregistered: %s", worker_id, reason)
        if stale_job is not None:
            self.table.fail_event(stale_job, f"worker {worker_id} died ({reason})", worker_id)
        self._pump()

    # -- scheduling and supervision ------------------------------------------

    def _pump(self) -> None:
        """Assign ready jobs to idle workers until one side runs dry."""
        while True:
            with self._lock:
                idle = [w for w in self._workers.values() if w.state == "idle"]
            if not idle:
                return
            job = self.table.take_ready()
            if job is None:
                return
            outcome = "unassigned"
            for worker in idle:
                with self._lock:
                    if worker.state != "idle" or worker.worker_id not in self._workers:
                        continue
                    worker.state = "busy"
                    worker.current_job = job.job_id
                self.table.mark_assigned(job.job_id, worker.worker_id, self.clock() + self.job_timeout)
                if self._send(
                    worker,
                    {
                        "type": "eval",
                        "job_id": job.job_id,
                        "arch": to_record(job.arch),
                        "eval_config": self.eval_config,
                    },
                ):
                    outcome = "assigned"
                else:
                    # Death handling strikes/requeues this job itself.
                    self._worker_died(worker.worker_id, "send failure")
                    outcome = "requeued"
                break
            if outcome == "unassigned":
                self.table.push_back(job.job_id)
                return

    def scan_once(self, now: Optional[float] = None) -> None:
        """One supervision pass: job timeouts, liveness probes, pool-empty."""
        now = self.clock() if now is None else now

        for job_id in self.table.timed_out(now):
            job = self.table.job(job_id)
            slow_worker = job.assigned_to if job else None
            if slow_worker:
                with self._lock:
                    worker = self._workers.get(slow_worker)
                    if worker is not None and worker.current_job == job_id:
                        worker.state = "suspect"
                        worker.current_job = None
                        logger.warning(
                            "worker %s exceeded the job timeout on %s; marked suspect",
                            slow_worker,
                            job_id,
                        )
            self.table.fail_event(job_id, "evaluation timed out", slow_worker)

        with self._lock:
            workers = list(self._workers.values())
        for worker in workers:
            with self._lock:
                if worker.pending_nonce is not None and now - worker.pending_since > self.ping_timeout:
                    dead = True
                else:
                    dead = False
                    if now - worker.last_ping_sent >= self.ping_interval and worker.pending_nonce is None:
                        worker.pending_nonce = uuid.uuid4().hex
                        worker.pending_since = now
                        worker.last_ping_sent = now
                        nonce = worker.pending_nonce
                    else:
                        nonce = None
            if dead:
                self._worker_died(worker.worker_id, "liveness probe unanswered")
            elif nonce is not None:
                if not self._send(worker, {"type": "ping", "nonce": nonce}):
                    self._worker_died(worker.worker_id, "ping send failure")

        with self._lock:
            no_workers = not self._workers
        if no_workers and self.table.outstanding > 0:
            if self._empty_since is None:
                self._empty_since = now
            elif not self._empty_surfaced and now - self._empty_since >= self.pool_empty_grace:
                self._empty_surfaced = True
                self._completions.put(_POOL_EMPTY)
        else:
            self._empty_since = None

        self._pump()

    def _supervise_loop(self) -> None:
        interval = max(0.05, min(self.job_timeout, self.ping_interval) / 4.0)
        while not self._closing.is_set():
            self.scan_once()
            self._closing.wait(interval)
