"""Long-running protocol participant: connect, announce, evaluate, repeat.

One job runs at a time; a reader thread keeps consuming the socket during
evaluation so liveness pings are answered immediately.  Results are cached
by job id and duplicate requests get the cached bytes back verbatim, which
makes re-deliveries idempotent.  Lost connections trigger reconnects with
bounded exponential backoff; a successful session resets the budget.
"""

import logging
import queue
import socket
import threading
from collections import OrderedDict
from typing import Callable, Optional

from .protocol import ProtocolError, decode_line, encode_line

__all__ = ["WorkerService"]

logger = logging.getLogger("eval_worker.service")

_SESSION_OVER = object()  # reader-to-worker sentinel


class WorkerService:
    def __init__(
        self,
        host: str,
        port: int,
        worker_id: str,
        evaluator: Callable[[object, dict], dict],
        capabilities: Optional[dict] = None,
        reconnect_attempts: int = 8,
        backoff_base: float = 1.0,
        backoff_cap: float = 30.0,
        result_cache_size: int = 128,
        connect_timeout: float = 10.0,
    ):
        if reconnect_attempts < 1:
            raise ValueError(f"reconnect_attempts must be >= 1, got {reconnect_attempts}")
        self.host = host
        self.port = port
        self.worker_id = worker_id
        self.evaluator = evaluator
        self.capabilities = dict(capabilities or {"evaluator": "distill-attack"})
        self.reconnect_attempts = reconnect_attempts
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.connect_timeout = connect_timeout
        self._results: OrderedDict[str, bytes] = OrderedDict()
        self._result_cache_size = result_cache_size
        self._stop = threading.Event()
        self._sock: Optional[socket.socket] = None
        self._send_lock = threading.Lock()
        self.jobs_done = 0
        self.sessions = 0

    # -- lifecycle ----------------------------------------------------------

    def stop(self) -> None:
        self._stop.set()
        sock = self._sock
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            try:
                sock.close()
            except OSError:
                pass

    def run(self) -> int:
        """Serve until stopped (returns 0) or out of reconnect budget (1)."""
        failures = 0
        while not self._stop.is_set():
            try:
                sock = socket.create_connection((self.host, self.port), timeout=self.connect_timeout)
            except OSError as exc:
                failures += 1
                if failures >= self.reconnect_attempts:
                    logger.error(
                        "giving up after %d failed connection attempts: %s", failures, exc
                    )
                    return 1
                delay = min(self.backoff_cap, self.backoff_base * 2 ** (failures - 1))
                logger.warning(
                    "connect to %s:%d failed (%s); retry %d/%d in %.1fs",
                    self.host, self.port, exc, failures, self.reconnect_attempts - 1, delay,
                )
                if self._stop.wait(delay):
                    break
                continue
            failures = 0
            self.sessions += 1
            try:
                self._session(sock)
            finally:
                self._sock = None
                try:
                    sock.close()
                except OSError:
                    pass
            if not self._stop.is_set():
                logger.warning("connection to engine lost; reconnecting")
        return 0

    # -- one connected session ------------------------------------------------

    def _session(self, sock: socket.socket) -> None:
        sock.settimeout(None)
        self._sock = sock
        if not self._send(sock, {"type": "hello", "worker_id": self.worker_id, "capabilities": self.capabilities}):
            return
        logger.info("connected to engine at %s:%d as %s", self.host, self.port, self.worker_id)

        jobs: "queue.Queue" = queue.Queue()
        reader = threading.Thread(target=self._read_loop, args=(sock, jobs), daemon=True)
        reader.start()
        while not self._stop.is_set():
            item = jobs.get()
            if item is _SESSION_OVER:
                return
            if not self._handle_eval(sock, item):
                return

    def _read_loop(self, sock: socket.socket, jobs: "queue.Queue") -> None:
        reader = sock.makefile("rb")
        while True:
            try:
                line = reader.readline()
            except OSError:
                break
            if not line:
                break
            try:
                message = decode_line(line)
            except ProtocolError as exc:
                logger.warning("ignoring malformed line from engine: %s", exc)
                continue
            mtype = message["type"]
            if mtype == "ping":
                # answered here so computation in the main thread never delays it
                self._send(sock, {"type": "pong", "nonce": message.get("nonce", "")})
            elif mtype == "eval":
                jobs.put(message)
            elif mtype == "pong":
                pass
            else:
                logger.warning("ignoring unknown message type %r from engine", mtype)
        jobs.put(_SESSION_OVER)

    def _handle_eval(self, sock: socket.socket, message: dict) -> bool:
        job_id = message.get("job_id")
        if not isinstance(job_id, str):
            logger.warning("eval request without a job_id ignored")
            return True
        cached = self._results.get(job_id)
        if cached is not None:
            logger.info("re-sending cached result for duplicate job %s", job_id)
            return self._send_raw(sock, cached)

        eval_config = message.get("eval_config")
        eval_config = eval_config if isinstance(eval_config, dict) else {}
        try:
            payload = self.evaluator(message.get("arch"), eval_config)
        except Exception as exc:  # evaluator contract says it shouldn't raise; survive anyway
            logger.exception("evaluator raised on job %s", job_id)
            payload = {"status": "error", "error_message": f"{type(exc).__name__}: {exc}"}
        encoded = encode_line({"type": "result", "job_id": job_id, **payload})
        self._results[job_id] = encoded
        while len(self._results) > self._result_cache_size:
            self._results.popitem(last=False)
        self.jobs_done += 1
        return self._send_raw(sock, encoded)

    # -- plumbing -------------------------------------------------------------

    def _send(self, sock: socket.socket, message: dict) -> bool:
        return self._send_raw(sock, encode_line(message))

    def _send_raw(self, sock: socket.socket, data: bytes) -> bool:
        try:
            with self._send_lock:
                sock.sendall(data)
            return True
        except OSError as exc:
            logger.warning("send to engine failed: %s", exc)
            return False
