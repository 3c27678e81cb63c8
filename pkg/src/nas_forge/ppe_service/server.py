"""Threaded PPE (performance/power evaluation) server.

One reader thread per connection decodes frames and hands requests to a
shared pool of ``max_concurrent`` workers; responses go back on the same
connection as soon as they are ready, so they may be out of order. The cost
model and the config table are immutable and shared by all workers.
"""

from __future__ import annotations

import itertools
import logging
import signal
import socket
import threading
from concurrent.futures import ThreadPoolExecutor

from ..cost_model import AcceleratorConfig, default_config, metrics_to_dict, model_metrics
from ..errors import ValidationError
from .framing import ProtocolError, encode_frame, read_frame
from .messages import Detail, EstimateRequest, EstimateResponse, Status

log = logging.getLogger(__name__)


def parse_hostport(text):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"expected HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


class PpeServer:
    def __init__(self, host="127.0.0.1", port=0, config: AcceleratorConfig = None, max_concurrent=8,
                 configs=None):
        if max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        self.host = host
        self.port = port
        self.config = config or default_config()
        self.configs = {"default": self.config, self.config.name: self.config}
        self.configs.update(configs or {})
        self.max_concurrent = max_concurrent
        self._counter = itertools.count(1)
        self.requests_seen = 0
        self._sock = None
        self._pool = None
        self._stopping = threading.Event()
        self._stopped = threading.Event()
        self._stop_requested = threading.Event()
        self._conns = set()
        self._conns_lock = threading.Lock()
        self._accept_thread = None

    # -- request handling ------------------------------------------------------

    def handle(self, doc) -> EstimateResponse:
        """Evaluate one decoded request document. Never raises."""
        self.requests_seen = next(self._counter)
        rid = doc.get("request_id") if isinstance(doc, dict) else None
        if isinstance(rid, bool) or not isinstance(rid, int):
            rid = None
        try:
            req = EstimateRequest.from_dict(doc)
            cfg = self._resolve(req.accel)
            metrics = model_metrics(req.model, cfg)
        except ValidationError as exc:
            return EstimateResponse(rid, Status.INVALID_MODEL, None, str(exc))
        except Exception as exc:
            log.exception("internal error on request %s", rid)
            return EstimateResponse(rid, Status.INTERNAL_ERROR, None, f"{type(exc).__name__}: {exc}")
        return EstimateResponse(req.request_id, Status.OK, metrics_to_dict(metrics, req.detail is Detail.PER_OP))

    def _resolve(self, accel):
        if accel is None:
            return self.config
        if isinstance(accel, AcceleratorConfig):
            return accel
        try:
            return self.configs[accel]
        except KeyError:
            raise ValidationError(f"unknown accelerator config {accel!r}") from None

    # -- lifecycle -----------------------------------------------------------------

    def start(self):
        sock = socket.create_server((self.host, self.port), backlog=128)
        sock.settimeout(0.2)
        self._sock = sock
        self.port = sock.getsockname()[1]
        self._pool = ThreadPoolExecutor(self.max_concurrent, thread_name_prefix="ppe-worker")
        self._accept_thread = threading.Thread(target=self._accept_loop, name="ppe-accept", daemon=True)
        self._accept_thread.start()
        log.info("PPE server listening on %s:%d (max_concurrent=%d)", self.host, self.port, self.max_concurrent)
        return self

    @property
    def address(self):
        return self.host, self.port

    def __enter__(self):
        return self.start() if self._sock is None else self

    def __exit__(self, *exc):
        self.shutdown()

    def request_stop(self, *_):
        """Ask ``serve_forever`` to shut down; safe from a signal handler."""
        self._stop_requested.set()

    def serve_forever(self, handle_signals=True):
        """Block until SIGINT/SIGTERM (or ``request_stop``), then shut down gracefully."""
        if self._sock is None:
            self.start()
        if handle_signals and threading.current_thread() is threading.main_thread():
            for sig in (signal.SIGINT, signal.SIGTERM):
                signal.signal(sig, self.request_stop)
        try:
            while not (self._stop_requested.wait(0.5) or self._stopped.is_set()):
                pass
            log.info("stop requested, shutting down")
        finally:
            self.shutdown()

    def shutdown(self):
        """Stop accepting, let in-flight requests finish, then drop connections."""
        if self._stopping.is_set():
            self._stopped.wait()
            return
        self._stopping.set()
        if self._accept_thread:
            self._accept_thread.join()
        if self._sock:
            self._sock.close()
        if self._pool:
            self._pool.shutdown(wait=True)
        with self._conns_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        self._stopped.set()

    # -- sockets -------------------------------------------------------------------

    def _accept_loop(self):
        while not self._stopping.is_set():
            try:
                conn, peer = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            with self._conns_lock:
                self._conns.add(conn)
            threading.Thread(target=self._serve_conn, args=(conn, peer), daemon=True).start()

    def _serve_conn(self, conn, peer):
        write_lock = threading.Lock()

        def reply(resp):
            data = encode_frame(resp.to_dict())
            with write_lock:
                try:
                    conn.sendall(data)
                except OSError:
                    log.debug("client %s went away before its response", peer)

        try:
            while not self._stopping.is_set():
                try:
                    doc = read_frame(conn)
                except ProtocolError as exc:
                    log.warning("protocol error from %s: %s", peer, exc)
                    reply(EstimateResponse(None, Status.INVALID_MODEL, None, f"protocol error: {exc}"))
                    break
                if doc is None:
                    break
                try:
                    self._pool.submit(lambda d=doc: reply(self.handle(d)))
                except RuntimeError:
                    rid = doc.get("request_id") if isinstance(doc, dict) else None
                    reply(EstimateResponse(rid, Status.INTERNAL_ERROR, None, "server shutting down"))
        except OSError:
            pass
        finally:
            if not self._stopping.is_set():
                with self._conns_lock:
                    self._conns.discard(conn)
                conn.close()
