"""Query interface to the target model.

Hinge losses are computed attacker-side from raw logits. Oracles count every
query and enforce a hard budget; synthetic in-process models (with exact
gradient accessors for tests) stand in for real networks, and a remote client
speaks the JSON wire protocol served by a model adapter.
"""

import json
import time
from dataclasses import dataclass

import numpy as np
import requests

from .errors import BudgetExhaustedError, OracleUnavailableError, ProtocolError
from .image import apply_block_delta

DEFAULT_MARGIN = 0.05

REMOTE_RETRIES = 3
REMOTE_BACKOFF = 0.25  # seconds, doubled per retry
REMOTE_TIMEOUT = 30.0


def hinge_untargeted(logits, y, margin=DEFAULT_MARGIN):
    """max(F_y - max_{j != y} F_j, -margin); negative means misclassified."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= y < logits.shape[0]:
        raise ValueError(f"label {y} out of range")
    others = np.delete(logits, y)
    return float(max(logits[y] - np.max(others), -margin))


def hinge_targeted(logits, q, margin=DEFAULT_MARGIN):
    """max(max_j F_j - F_q, -margin); zero once the target class leads."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.shape[0] < 2:
        raise ValueError("need at least 2 classes")
    if not 0 <= q < logits.shape[0]:
        raise ValueError(f"target {q} out of range")
    return float(max(np.max(logits) - logits[q], -margin))


@dataclass(frozen=True)
class LossSpec:
    """Which hinge loss to optimize: untargeted at label, or targeted at class."""

    label: int
    target: int = None
    margin: float = DEFAULT_MARGIN

    @property
    def targeted(self):
        return self.target is not None

    def loss(self, logits):
        if self.targeted:
            return hinge_targeted(logits, self.target, self.margin)
        return hinge_untargeted(logits, self.label, self.margin)


class LinearModel:
    """Logits = W @ flat(x) + b. Rows of W are unit-norm."""

    def __init__(self, weights, bias):
        self.weights = np.asarray(weights, dtype=np.float64)
        self.bias = np.asarray(bias, dtype=np.float64)
        self.num_classes = self.weights.shape[0]

    @classmethod
    def seeded(cls, num_classes=10, input_shape=(3, 32, 32), seed=42):
        rng = np.random.default_rng(seed)
        dims = int(np.prod(input_shape))
        w = rng.standard_normal((num_classes, dims))
        w /= np.linalg.norm(w, axis=1, keepdims=True)
        return cls(w, np.zeros(num_classes))

    def logits(self, x):
        flat = np.asarray(x, dtype=np.float64).ravel()
        if flat.shape[0] != self.weights.shape[1]:
            raise ValueError(
                f"input has {flat.shape[0]} values, model expects {self.weights.shape[1]}"
            )
        return self.weights @ flat + self.bias

    def loss_gradient(self, x, spec):
        """Exact gradient of the hinge loss at x (test oracle only).

        Zero on the hinge floor; at ties the active branch is the argmax one.
        """
        s = self.logits(x)
        grad_logits = _hinge_grad_logits(s, spec)
        return (grad_logits @ self.weights).reshape(np.shape(x))


class Mlp2Model:
    """Two affine layers with an elementwise max(., 0) between them."""

    def __init__(self, w1, b1, w2, b2):
        self.w1 = np.asarray(w1, dtype=np.float64)
        self.b1 = np.asarray(b1, dtype=np.float64)
        self.w2 = np.asarray(w2, dtype=np.float64)
        self.b2 = np.asarray(b2, dtype=np.float64)
        self.num_classes = self.w2.shape[0]

    @classmethod
    def seeded(cls, num_classes=10, input_shape=(3, 32, 32), hidden=64, seed=42):
        rng = np.random.default_rng(seed)
        dims = int(np.prod(input_shape))
        w1 = rng.standard_normal((hidden, dims)) / np.sqrt(dims)
        b1 = 0.1 * rng.standard_normal(hidden)
        w2 = rng.standard_normal((num_classes, hidden)) / np.sqrt(hidden)
        b2 = np.zeros(num_classes)
        return cls(w1, b1, w2, b2)

    def logits(self, x):
        flat = np.asarray(x, dtype=np.float64).ravel()
        if flat.shape[0] != self.w1.shape[1]:
            raise ValueError(
                f"input has {flat.shape[0]} values, model expects {self.w1.shape[1]}"
            )
        h = np.maximum(self.w1 @ flat + self.b1, 0.0)
        return self.w2 @ h + self.b2

    def loss_gradient(self, x, spec):
        flat = np.asarray(x, dtype=np.float64).ravel()
        z1 = self.w1 @ flat + self.b1
        h = np.maximum(z1, 0.0)
        s = self.w2 @ h + self.b2
        grad_logits = _hinge_grad_logits(s, spec)
        dh = grad_logits @ self.w2
        dz1 = dh * (z1 > 0.0)
        return (dz1 @ self.w1).reshape(np.shape(x))


def _hinge_grad_logits(s, spec):
    grad = np.zeros_like(s)
    if spec.targeted:
        q = spec.target
        j_star = int(np.argmax(s))
        if s[j_star] - s[q] > -spec.margin and j_star != q:
            grad[j_star] += 1.0
            grad[q] -= 1.0
    else:
        y = spec.label
        others = s.copy()
        others[y] = -np.inf
        j_star = int(np.argmax(others))
        if s[y] - s[j_star] > -spec.margin:
            grad[y] += 1.0
            grad[j_star] -= 1.0
    return grad


def make_synthetic_model(kind, num_classes=10, input_shape=(3, 32, 32), seed=42):
    if kind == "linear":
        return LinearModel.seeded(num_classes, input_shape, seed)
    if kind == "mlp":
        return Mlp2Model.seeded(num_classes, input_shape, seed=seed)
    raise ValueError(f"unknown synthetic model kind {kind!r}")


class BudgetedOracle:
    """Counts queries and refuses to start one past the budget.

    The counter only advances on queries that produced logits, so it stays
    exact when an evaluation raises mid-flight.
    """

    def __init__(self, budget=None):
        self.budget = budget
        self.queries_used = 0

    def query(self, x):
        if self.budget is not None and self.queries_used >= self.budget:
            raise BudgetExhaustedError(self.queries_used)
        logits = self._evaluate(x)
        self.queries_used += 1
        return logits

    def _evaluate(self, x):
        raise NotImplementedError


class SyntheticOracle(BudgetedOracle):
    def __init__(self, model, budget=None):
        super().__init__(budget)
        self.model = model
        self.num_classes = model.num_classes

    def _evaluate(self, x):
        return self.model.logits(x)


class RemoteOracle(BudgetedOracle):
    """Client for the /v1/logits wire protocol."""

    def __init__(self, endpoint, budget=None, session=None, timeout=REMOTE_TIMEOUT,
                 backoff=REMOTE_BACKOFF):
        super().__init__(budget)
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.backoff = backoff
        self._http = session if session is not None else requests.Session()

    def health(self):
        try:
            resp = self._http.get(f"{self.endpoint}/v1/health", timeout=self.timeout)
        except requests.RequestException as exc:
            raise OracleUnavailableError(f"health check failed: {exc}") from exc
        if resp.status_code != 200:
            raise OracleUnavailableError(f"health returned {resp.status_code}")
        body = resp.json()
        if body.get("status") != "ok":
            raise OracleUnavailableError(f"oracle not ready: {body}")
        return body

    def _evaluate(self, x):
        x = np.asarray(x, dtype=np.float64)
        payload = json.dumps(
            {"shape": list(x.shape), "pixels": x.ravel().tolist()}
        ).encode("utf-8")
        delay = self.backoff
        last_exc = None
        for attempt in range(REMOTE_RETRIES):
            try:
                resp = self._http.post(
                    f"{self.endpoint}/v1/logits",
                    data=payload,
                    headers={"Content-Type": "application/json"},
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_exc = exc
                if attempt < REMOTE_RETRIES - 1:
                    time.sleep(delay)
                    delay *= 2.0
                continue
            if resp.status_code == 503:
                last_exc = OracleUnavailableError("model loading (503)")
                if attempt < REMOTE_RETRIES - 1:
                    time.sleep(delay)
                    delay *= 2.0
                continue
            if resp.status_code != 200:
                raise ProtocolError(f"oracle returned {resp.status_code}: {resp.text[:200]}")
            return _parse_logits(resp)
        raise OracleUnavailableError(
            f"oracle unreachable after {REMOTE_RETRIES} attempts: {last_exc}"
        )


def _parse_logits(resp):
    try:
        body = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"response is not JSON: {exc}") from exc
    logits = body.get("logits")
    if not isinstance(logits, list) or not logits:
        raise ProtocolError(f"missing or empty logits field: {body}")
    try:
        return np.asarray(logits, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ProtocolError(f"non-numeric logits: {exc}") from exc


def finite_difference_map(oracle, x_t, grid, eta, loss_spec):
    """Per-block symmetric difference of the loss under a +/-eta block probe.

    Two queries per block; returns an array indexed [k, i, j].
    """
    out = np.empty((grid.c, grid.h, grid.w))
    for block in grid.blocks():
        loss_plus = loss_spec.loss(oracle.query(apply_block_delta(x_t, grid, block, eta)))
        loss_minus = loss_spec.loss(oracle.query(apply_block_delta(x_t, grid, block, -eta)))
        out[block.k, block.i, block.j] = loss_plus - loss_minus
    return out
