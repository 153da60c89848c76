"""HTTP service: endpoints, validation codes, snapshot purity."""

import base64
import json
import threading
import urllib.request

import numpy as np
import pytest

import ovdet.server as server_mod
from ovdet.configs import EncoderConfig, ModelConfig
from ovdet.data.federated import image_to_png_bytes
from ovdet.model import DetectionModel
from ovdet.server import make_server
from ovdet.tokenizer import build_vocab_for


@pytest.fixture(scope="module")
def service():
    vocab = build_vocab_for(["red circle", "blue square"])
    enc = EncoderConfig(image_size=24, patch_size=8, depth=1, width=16,
                        n_heads=2, mlp_dim=32, text_vocab=len(vocab))
    model = DetectionModel.from_scratch(ModelConfig(encoder=enc), vocab, seed=0)
    srv = make_server(model, host="127.0.0.1", port=0, workers=4)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{srv.server_address[1]}"
    srv.shutdown()


def request(url, path, payload=None, method=None):
    data = json.dumps(payload).encode() if payload is not None else None
    req = urllib.request.Request(url + path, data=data, method=method,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as err:
        return err.code, json.loads(err.read())


def png_b64(seed=0, size=24):
    image = np.random.default_rng(seed).uniform(size=(size, size, 3))
    return base64.b64encode(image_to_png_bytes(image)).decode()


def test_health(service):
    status, body = request(service, "/v1/health")
    assert status == 200 and body == {"status": "ok"}


def test_model_info(service):
    status, body = request(service, "/v1/model")
    assert status == 200
    assert body["model"]["encoder"]["width"] == 16
    assert body["n_parameters"] > 0


def test_detect_text_queries(service):
    status, body = request(service, "/v1/detect", {
        "image": png_b64(), "text_queries": ["red circle"],
        "threshold": 0.0, "top_k": 4})
    assert status == 200
    dets = body["detections"]
    assert len(dets) == 4
    scores = [d["score"] for d in dets]
    assert scores == sorted(scores, reverse=True)
    for d in dets:
        assert all(0.0 <= v <= 1.0 for v in d["bbox"])
    assert body["timing_ms"] > 0


def test_detect_threshold_validation(service):
    status, body = request(service, "/v1/detect", {
        "image": png_b64(), "text_queries": ["red circle"], "threshold": 1.1})
    assert status == 400
    assert "threshold" in body["error"]


def test_malformed_json_400(service):
    req = urllib.request.Request(service + "/v1/detect", data=b"{nope",
                                 headers={"Content-Type": "application/json"})
    try:
        urllib.request.urlopen(req)
        raise AssertionError("expected failure")
    except urllib.error.HTTPError as err:
        assert err.code == 400


def test_missing_queries_400(service):
    status, body = request(service, "/v1/detect", {"image": png_b64()})
    assert status == 400


def test_unknown_path_404(service):
    status, _ = request(service, "/v1/nothing", {})
    assert status == 404


def test_text_query_handles_roundtrip(service):
    status, body = request(service, "/v1/queries/text",
                           {"categories": ["red circle", "blue square"],
                            "mode": "eval"})
    assert status == 200
    handles = [q["handle"] for q in body["queries"]]
    assert len(handles) == 2
    assert all(q["n_prompts"] == 7 for q in body["queries"])
    status, det_body = request(service, "/v1/detect", {
        "image": png_b64(), "query_handles": handles, "threshold": 0.0,
        "top_k": 3})
    assert status == 200
    assert {d["query_name"] for d in det_body["detections"]} <= \
        {"red circle", "blue square"}


def test_image_query_fallback_flag(service):
    # a tiny query box overlaps no predicted box: fallback to the text query
    status, body = request(service, "/v1/queries/image", {
        "image": png_b64(1), "box": [0.5, 0.5, 0.02, 0.02]})
    assert status == 200
    assert body["fallback"] is True
    status, body2 = request(service, "/v1/queries/image", {
        "image": png_b64(1), "box": [0.5, 0.5, 0.33, 0.33]})
    assert status == 200
    assert body2["fallback"] is False


def test_invalid_box_400(service):
    status, _ = request(service, "/v1/queries/image",
                        {"image": png_b64(), "box": [2.0, 0.5, 0.1]})
    assert status == 400


def test_oversized_image_413(service, monkeypatch):
    monkeypatch.setattr(server_mod, "MAX_IMAGE_BYTES", 64)
    try:
        status, body = request(service, "/v1/queries/image", {
            "image": png_b64(), "box": [0.5, 0.5, 0.2, 0.2]})
        assert status == 413
    finally:
        monkeypatch.undo()


def test_concurrent_identical_requests_identical_bodies(service):
    payload = {"image": png_b64(2), "text_queries": ["red circle"],
               "threshold": 0.0, "top_k": 5}
    results = [None] * 6

    def hit(i):
        _, body = request(service, "/v1/detect", payload)
        body.pop("timing_ms")
        results[i] = json.dumps(body, sort_keys=True)

    threads = [threading.Thread(target=hit, args=(i,)) for i in range(6)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(set(results)) == 1


def test_k_shot_grouping(service):
    patches = [{"image": png_b64(3), "box": [0.375, 0.375, 0.33, 0.33],
                "k_shot_group": "g"},
               {"image": png_b64(4), "box": [0.625, 0.625, 0.33, 0.33],
                "k_shot_group": "g"}]
    status, body = request(service, "/v1/detect", {
        "image": png_b64(5), "image_queries": patches, "threshold": 0.0,
        "top_k": 3})
    assert status == 200
    # both patches pooled into one averaged query
    assert {d["query_name"] for d in body["detections"]} == {"image:g"}
