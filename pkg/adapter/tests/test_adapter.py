import json

import numpy as np
import requests

from model_adapter.models import LinearEchoModel


def post_logits(url, payload, raw=None):
    body = raw if raw is not None else json.dumps(payload)
    return requests.post(
        f"{url}/v1/logits", data=body,
        headers={"Content-Type": "application/json"}, timeout=10,
    )


def image_payload(seed=7, shape=(3, 32, 32)):
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 256, size=shape).astype(np.float64) / 255.0
    return pixels, {"shape": list(shape), "pixels": pixels.ravel().tolist()}


class TestHealth:
    def test_loading_before_model_attached(self, bare_server):
        _, url = bare_server
        resp = requests.get(f"{url}/v1/health", timeout=10)
        assert resp.status_code == 503
        assert resp.json()["status"] == "loading"

    def test_ok_after_model_attached(self, echo_server):
        _, url = echo_server
        resp = requests.get(f"{url}/v1/health", timeout=10)
        assert resp.status_code == 200
        body = resp.json()
        assert body == {"status": "ok", "model": "linear-echo", "classes": 10}

    def test_unknown_path_404(self, echo_server):
        _, url = echo_server
        assert requests.get(f"{url}/v1/nope", timeout=10).status_code == 404


class TestLogitsValidation:
    def test_logits_before_model_attached_503(self, bare_server):
        _, url = bare_server
        _, payload = image_payload()
        assert post_logits(url, payload).status_code == 503

    def test_malformed_json_400(self, echo_server):
        _, url = echo_server
        resp = post_logits(url, None, raw="{not json")
        assert resp.status_code == 400

    def test_missing_fields_400(self, echo_server):
        _, url = echo_server
        assert post_logits(url, {"shape": [3, 32, 32]}).status_code == 400
        assert post_logits(url, {"pixels": [0.0]}).status_code == 400

    def test_wrong_length_400(self, echo_server):
        _, url = echo_server
        resp = post_logits(url, {"shape": [3, 32, 32], "pixels": [0.5] * 10})
        assert resp.status_code == 400

    def test_pixels_out_of_range_400(self, echo_server):
        _, url = echo_server
        _, payload = image_payload()
        payload["pixels"][0] = 1.5
        assert post_logits(url, payload).status_code == 400
        payload["pixels"][0] = -0.1
        assert post_logits(url, payload).status_code == 400

    def test_wrong_shape_for_model_400(self, echo_server):
        _, url = echo_server
        resp = post_logits(url, {"shape": [3, 16, 16], "pixels": [0.5] * (3 * 16 * 16)})
        assert resp.status_code == 400

    def test_non_numeric_pixels_400(self, echo_server):
        _, url = echo_server
        payload = {"shape": [1, 1, 2], "pixels": ["a", 0.5]}
        assert post_logits(url, payload).status_code == 400


class TestLogitsServing:
    def test_round_trip_matches_local_model(self, echo_server):
        _, url = echo_server
        pixels, payload = image_payload()
        resp = post_logits(url, payload)
        assert resp.status_code == 200
        got = np.asarray(resp.json()["logits"])
        expect = LinearEchoModel().logits(pixels)
        np.testing.assert_allclose(got, expect, atol=1e-4)

    def test_identical_requests_identical_logits(self, echo_server):
        _, url = echo_server
        _, payload = image_payload(3)
        a = post_logits(url, payload).content
        b = post_logits(url, payload).content
        assert a == b

    def test_query_counting_per_client(self, echo_server):
        server, url = echo_server
        _, payload = image_payload(5)
        for _ in range(3):
            post_logits(url, payload)
        assert sum(server.state.query_counts.values()) == 3
