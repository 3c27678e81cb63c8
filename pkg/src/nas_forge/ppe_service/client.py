"""Client for the PPE server.

A single connection carries many outstanding requests. A background reader
thread routes each response to the waiting caller by request_id, so one
client can be shared by several search workers.
"""

from __future__ import annotations

import itertools
import logging
import socket
import threading
from concurrent.futures import Future, TimeoutError as FutureTimeout

from ..core_ir import ModelIr
from ..cost_model import ModelMetrics
from ..errors import EvaluatorUnavailable, NasForgeError
from .framing import ProtocolError, encode_frame, read_frame
from .messages import Detail, EstimateRequest, EstimateResponse

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT_S = 30.0


class PpeError(NasForgeError):
    pass


class PpeTimeout(PpeError):
    pass


class PpeConnectionError(PpeError, EvaluatorUnavailable):
    pass


class PpeProtocolError(PpeError):
    pass


class PpeRemoteError(PpeError):
    """The server answered, but with a non-Ok status."""

    def __init__(self, response: EstimateResponse):
        super().__init__(f"{response.status.value}: {response.error}")
        self.response = response


class PpeClient:
    def __init__(self, host="127.0.0.1", port=0, timeout=DEFAULT_TIMEOUT_S, connect_timeout=5.0):
        self.timeout = timeout
        try:
            self._sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise PpeConnectionError(f"cannot connect to {host}:{port}: {exc}") from exc
        self._sock.settimeout(None)
        self._ids = itertools.count(1)
        self._pending = {}
        self._lock = threading.Lock()
        self._write_lock = threading.Lock()
        self._failure = None
        self._reader = threading.Thread(target=self._read_loop, name="ppe-client-reader", daemon=True)
        self._reader.start()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()
        self._reader.join(timeout=5)

    def _fail_all(self, exc):
        with self._lock:
            if self._failure is None:
                self._failure = exc
            pending, self._pending = self._pending, {}
        for fut in pending.values():
            if not fut.done():
                fut.set_exception(exc)

    def _read_loop(self):
        while True:
            try:
                doc = read_frame(self._sock)
            except ProtocolError as exc:
                self._fail_all(PpeProtocolError(str(exc)))
                return
            except OSError as exc:
                self._fail_all(PpeConnectionError(f"connection lost: {exc}"))
                return
            if doc is None:
                self._fail_all(PpeConnectionError("server closed the connection"))
                return
            try:
                resp = EstimateResponse.from_dict(doc)
            except (NasForgeError, ValueError, TypeError, KeyError) as exc:
                self._fail_all(PpeProtocolError(f"malformed response: {exc}"))
                return
            with self._lock:
                fut = self._pending.pop(resp.request_id, None)
            if fut is None:
                # e.g. a reply to a frame the server could not parse
                log.warning("response for unknown request_id %r: %s", resp.request_id, resp.error)
                if resp.request_id is None:
                    self._fail_all(PpeProtocolError(f"server rejected a frame: {resp.error}"))
                    return
                continue
            fut.set_result(resp)

    def submit(self, model: ModelIr, accel=None, detail=Detail.TOTALS) -> Future:
        """Send a request and return a future for its response."""
        fut = Future()
        with self._lock:
            if self._failure is not None:
                raise self._failure
            rid = next(self._ids)
            self._pending[rid] = fut
        frame = encode_frame(EstimateRequest(rid, model, accel, detail).to_dict())
        try:
            with self._write_lock:
                self._sock.sendall(frame)
        except OSError as exc:
            with self._lock:
                self._pending.pop(rid, None)
            raise PpeConnectionError(f"send failed: {exc}") from exc
        fut.request_id = rid
        return fut

    def estimate(self, model: ModelIr, accel=None, detail=Detail.TOTALS, timeout=None) -> EstimateResponse:
        fut = self.submit(model, accel, detail)
        try:
            return fut.result(timeout=self.timeout if timeout is None else timeout)
        except FutureTimeout:
            with self._lock:
                self._pending.pop(fut.request_id, None)
            raise PpeTimeout(f"no response to request {fut.request_id} within {timeout or self.timeout} s") from None


class PpeEvaluator:
    """Search-engine evaluator that defers to a PPE server."""

    def __init__(self, client: PpeClient, accel=None):
        self.client = client
        self.accel = accel

    def __call__(self, model: ModelIr) -> ModelMetrics:
        resp = self.client.estimate(model, self.accel)
        if not resp.ok:
            raise PpeRemoteError(resp)
        return resp.model_metrics()
