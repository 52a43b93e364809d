"""Threaded HTTP server speaking the logits wire protocol.

POST /v1/logits  {"shape": [C, H, W], "pixels": [... floats in [0, 1] ...]}
                 -> 200 {"logits": [...]}, 400 on malformed bodies,
                 503 while the model is still loading.
GET  /v1/health  -> 200 {"status": "ok", "model": name, "classes": N}
                 or 503 {"status": "loading"}.
"""

import json
import logging
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

log = logging.getLogger("model_adapter")


class AdapterState:
    def __init__(self):
        self.model = None
        self.lock = threading.Lock()  # serializes inference
        self.query_counts = Counter()

    @property
    def ready(self):
        return self.model is not None


class BadRequest(Exception):
    pass


def _parse_request(body, model):
    try:
        payload = json.loads(body.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadRequest(f"body is not valid JSON: {exc}")
    if not isinstance(payload, dict):
        raise BadRequest("body must be a JSON object")
    shape = payload.get("shape")
    pixels = payload.get("pixels")
    if (
        not isinstance(shape, list)
        or len(shape) != 3
        or not all(isinstance(v, int) and v > 0 for v in shape)
    ):
        raise BadRequest("shape must be [C, H, W] positive integers")
    if not isinstance(pixels, list):
        raise BadRequest("pixels must be a list of numbers")
    expected = shape[0] * shape[1] * shape[2]
    if len(pixels) != expected:
        raise BadRequest(f"pixels length {len(pixels)} != C*H*W = {expected}")
    try:
        arr = np.asarray(pixels, dtype=np.float64).reshape(shape)
    except (TypeError, ValueError) as exc:
        raise BadRequest(f"pixels are not numeric: {exc}")
    if not np.isfinite(arr).all():
        raise BadRequest("pixels must be finite")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise BadRequest("pixels must lie in [0, 1]")
    if tuple(shape) != model.input_shape:
        raise BadRequest(
            f"model expects shape {list(model.input_shape)}, got {shape}"
        )
    return arr


class AdapterHandler(BaseHTTPRequestHandler):
    state = None  # bound by make_server

    def log_message(self, fmt, *args):
        log.debug("%s " + fmt, self.client_address[0], *args)

    def _send_json(self, code, payload):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path != "/v1/health":
            self._send_json(404, {"error": "unknown path"})
            return
        if not self.state.ready:
            self._send_json(503, {"status": "loading"})
            return
        model = self.state.model
        self._send_json(
            200, {"status": "ok", "model": model.name, "classes": model.num_classes}
        )

    def do_POST(self):
        if self.path != "/v1/logits":
            self._send_json(404, {"error": "unknown path"})
            return
        if not self.state.ready:
            self._send_json(503, {"status": "loading"})
            return
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length)
        try:
            arr = _parse_request(body, self.state.model)
        except BadRequest as exc:
            self._send_json(400, {"error": str(exc)})
            return
        with self.state.lock:
            logits = self.state.model.logits(arr)
        client = self.client_address[0]
        self.state.query_counts[client] += 1
        if self.state.query_counts[client] % 100 == 0:
            log.info("%s has made %d queries", client, self.state.query_counts[client])
        self._send_json(200, {"logits": [float(v) for v in logits]})


def make_server(host="127.0.0.1", port=0):
    """Build a server with no model attached yet (health reports loading)."""
    state = AdapterState()
    handler = type("BoundAdapterHandler", (AdapterHandler,), {"state": state})
    server = ThreadingHTTPServer((host, port), handler)
    server.state = state
    return server


def serve(model, host="127.0.0.1", port=8787):
    server = make_server(host, port)
    server.state.model = model
    log.info(
        "serving %s (%d classes) on %s:%d",
        model.name, model.num_classes, host, server.server_port,
    )
    server.serve_forever()
