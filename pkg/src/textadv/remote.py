"""Remote classifier access: an HTTP client with rate limiting and retries,
and the bundled mock server that exposes a trained LinearModel.

Wire protocol: POST {endpoint}/predict with body {"text": <string>} returns
{"scores": {<label>: <probability>, ...}}. Probabilities must sum to 1
within 1e-3. An optional bearer token travels in the Authorization header.
"""

from __future__ import annotations

import json
import signal
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import urlparse

import requests

from .classifiers import ClassDistribution, LinearModel, QueryCounter
from .embeddings import EmbeddingTable
from .errors import ConfigError, ProtocolError, TransportError
from .textcore import build_document

__all__ = ["RemoteScorer", "ModelHTTPServer", "make_server", "serve_model"]


class RemoteScorer:
    """Black-box handle for a classifier behind the wire protocol.

    Requests are serialized through the rate limiter (safe to call from
    multiple threads), retried with exponential backoff, and counted: the
    attached counter increments once per HTTP request sent, so with a
    healthy server it equals the server's received-request count.
    """

    def __init__(
        self,
        endpoint: str,
        auth_token: str | None = None,
        rate: float | None = None,
        counter: QueryCounter | None = None,
        timeout: float = 10.0,
        max_attempts: int = 3,
        backoff: float = 0.5,
        session: requests.Session | None = None,
    ):
        parsed = urlparse(endpoint)
        if parsed.scheme not in ("http", "https") or not parsed.netloc:
            raise ConfigError(f"malformed endpoint URL: {endpoint!r}")
        if rate is not None and rate <= 0:
            raise ConfigError("rate must be positive")
        if max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        self.endpoint = endpoint.rstrip("/")
        self._url = self.endpoint + "/predict"
        self._headers = {}
        if auth_token:
            self._headers["Authorization"] = f"Bearer {auth_token}"
        self._min_interval = None if rate is None else 1.0 / rate
        self._next_slot = 0.0
        self._rate_lock = threading.Lock()
        self.counter = counter if counter is not None else QueryCounter()
        self._timeout = timeout
        self._max_attempts = max_attempts
        self._backoff = backoff
        self._session = session if session is not None else requests.Session()

    def _throttle(self) -> None:
        if self._min_interval is None:
            return
        with self._rate_lock:
            now = time.monotonic()
            wait = self._next_slot - now
            start = self._next_slot if wait > 0 else now
            self._next_slot = start + self._min_interval
        if wait > 0:
            time.sleep(wait)

    def predict(self, text: str) -> ClassDistribution:
        last_status: int | None = None
        last_error = "no attempt made"
        for attempt in range(self._max_attempts):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            self._throttle()
            self.counter.increment()
            try:
                resp = self._session.post(
                    self._url,
                    json={"text": text},
                    headers=self._headers,
                    timeout=self._timeout,
                )
            except requests.RequestException as exc:
                last_error = str(exc)
                last_status = None
                continue
            if 200 <= resp.status_code < 300:
                return self._parse_response(resp)
            last_status = resp.status_code
            last_error = f"HTTP {resp.status_code}"
        raise TransportError(
            f"predict failed after {self._max_attempts} attempts: {last_error}",
            attempts=self._max_attempts,
            last_status=last_status,
        )

    @staticmethod
    def _parse_response(resp: requests.Response) -> ClassDistribution:
        try:
            body = resp.json()
        except ValueError:
            raise ProtocolError("response is not valid JSON") from None
        scores = body.get("scores") if isinstance(body, dict) else None
        if not isinstance(scores, dict) or not scores:
            raise ProtocolError('response lacks a non-empty "scores" object')
        items: list[tuple[str, float]] = []
        for label, prob in scores.items():
            if not isinstance(label, str) or not isinstance(prob, (int, float)):
                raise ProtocolError("scores must map labels to numbers")
            if prob < 0:
                raise ProtocolError(f"negative probability for {label!r}")
            items.append((label, float(prob)))
        total = sum(p for _, p in items)
        if abs(total - 1.0) > 1e-3:
            raise ProtocolError(f"probabilities sum to {total}, not 1 +/- 1e-3")
        return ClassDistribution(tuple((l, p / total) for l, p in items))


class _PredictHandler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def _send_json(self, status: int, payload: dict) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_POST(self):  # noqa: N802 (http.server API)
        if self.path != "/predict":
            self._send_json(404, {"error": "unknown path"})
            return
        self.server.count_request()
        length = int(self.headers.get("Content-Length", 0))
        raw = self.rfile.read(length)
        try:
            body = json.loads(raw.decode("utf-8"))
        except (ValueError, UnicodeDecodeError):
            self._send_json(400, {"error": "body is not valid JSON"})
            return
        text = body.get("text") if isinstance(body, dict) else None
        if not isinstance(text, str):
            self._send_json(400, {"error": 'body must be {"text": <string>}'})
            return
        doc = build_document(text)
        if not doc.words:
            self._send_json(400, {"error": "text contains no words"})
            return
        dist = self.server.model.predict_dist(doc, self.server.table)
        self._send_json(200, {"scores": dist.as_dict()})

    def do_GET(self):  # noqa: N802
        if self.path == "/stats":
            self._send_json(200, {"predict_requests": self.server.predict_requests})
        elif self.path == "/healthz":
            self._send_json(200, {"status": "ok"})
        else:
            self._send_json(404, {"error": "unknown path"})

    def log_message(self, fmt, *args):
        pass  # keep test output quiet


class ModelHTTPServer(ThreadingHTTPServer):
    """Mock classification service backed by an in-process LinearModel."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address, model: LinearModel, table: EmbeddingTable):
        super().__init__(address, _PredictHandler)
        self.model = model
        self.table = table
        self.predict_requests = 0
        self._count_lock = threading.Lock()

    def count_request(self) -> None:
        with self._count_lock:
            self.predict_requests += 1


def make_server(
    model: LinearModel,
    table: EmbeddingTable,
    port: int,
    host: str = "127.0.0.1",
) -> ModelHTTPServer:
    """Bind the mock server. Raises OSError if the port is taken; serve with
    ``server.serve_forever()`` (see :func:`serve_model` for the CLI path)."""
    return ModelHTTPServer((host, port), model, table)


def serve_model(
    model: LinearModel,
    table: EmbeddingTable,
    port: int,
    host: str = "127.0.0.1",
) -> None:
    """Run the mock server until SIGINT/SIGTERM, then shut down cleanly."""
    server = make_server(model, table, port, host)
    stop = threading.Event()

    def _handle(signum, frame):
        stop.set()

    old_int = signal.signal(signal.SIGINT, _handle)
    old_term = signal.signal(signal.SIGTERM, _handle)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        stop.wait()
    finally:
        server.shutdown()
        server.server_close()
        thread.join()
        signal.signal(signal.SIGINT, old_int)
        signal.signal(signal.SIGTERM, old_term)
