"""HTTP inference service over an immutable model snapshot.

JSON endpoints:
  GET  /v1/health            -> {"status": "ok"}
  GET  /v1/model             -> model configuration
  POST /v1/queries/text      {categories, mode} -> stored embedding handles
  POST /v1/queries/image     {image, box, k_shot?} -> handle + fallback flag
  POST /v1/detect            DetectRequest -> ranked detections

The model never changes for the process lifetime, so identical requests get
identical responses; a bounded semaphore caps concurrent forward passes.
"""

from __future__ import annotations

import base64
import json
import os
import threading
import time
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from ovdet.boxes import Box
from ovdet.data.federated import png_bytes_to_image
from ovdet.errors import DataError
from ovdet.model import DetectionModel
from ovdet.queries import (
    QueryEntry,
    QuerySet,
    QueryPatch,
    embed_text_queries,
    extract_image_query,
    fewshot_average,
)

MAX_IMAGE_BYTES = 8 * 1024 * 1024


class BadRequest(Exception):
    pass


class PayloadTooLarge(Exception):
    pass


class QueryStore:
    """Server-side embedding handles so clients can reuse queries."""

    def __init__(self):
        self._entries: dict[str, QueryEntry] = {}
        self._lock = threading.Lock()

    def put(self, entry: QueryEntry) -> str:
        handle = uuid.uuid4().hex
        with self._lock:
            self._entries[handle] = entry
        return handle

    def get(self, handle: str) -> QueryEntry:
        with self._lock:
            entry = self._entries.get(handle)
        if entry is None:
            raise BadRequest(f"unknown query handle {handle!r}")
        return entry


def _decode_image(b64: str) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as exc:
        raise BadRequest(f"invalid base64 image: {exc}") from exc
    if len(raw) > MAX_IMAGE_BYTES:
        raise PayloadTooLarge(f"image exceeds {MAX_IMAGE_BYTES} bytes")
    try:
        return png_bytes_to_image(raw)
    except Exception as exc:
        raise BadRequest(f"undecodable PNG: {exc}") from exc


def _parse_box(spec) -> Box:
    try:
        cx, cy, w, h = (float(v) for v in spec)
        return Box(cx, cy, w, h)
    except (TypeError, ValueError, DataError) as exc:
        raise BadRequest(f"invalid box {spec!r}: {exc}") from exc


class InferenceService:
    def __init__(self, model: DetectionModel, workers: int | None = None):
        self.model = model
        self.queries = QueryStore()
        self.semaphore = threading.Semaphore(workers or os.cpu_count() or 2)

    # ----------------------------------------------------------- endpoints

    def health(self) -> dict:
        return {"status": "ok"}

    def model_info(self) -> dict:
        return {"model": self.model.cfg.to_dict(),
                "vocab_sha256": self.model.vocab.sha256(),
                "n_parameters": self.model.params.n_values()}

    def text_queries(self, payload: dict) -> dict:
        categories = payload.get("categories")
        if not isinstance(categories, list) or not categories or \
                not all(isinstance(c, str) for c in categories):
            raise BadRequest("categories must be a nonempty list of strings")
        mode = payload.get("mode", "eval")
        if mode not in ("train", "eval"):
            raise BadRequest(f"unknown mode {mode!r}")
        rng = np.random.default_rng(0) if mode == "train" else None
        with self.semaphore:
            qs = embed_text_queries(self.model, categories, mode=mode, rng=rng)
        handles = [{"handle": self.queries.put(e), "name": e.name,
                    "n_prompts": int(np.atleast_2d(e.embeddings).shape[0])}
                   for e in qs.entries]
        return {"queries": handles}

    def image_query(self, payload: dict) -> dict:
        if "image" not in payload or "box" not in payload:
            raise BadRequest("image and box are required")
        image = _decode_image(payload["image"])
        box = _parse_box(payload["box"])
        with self.semaphore:
            emb, fallback = extract_image_query(self.model,
                                                QueryPatch(image=image, box=box))
        entry = QueryEntry(name=payload.get("name", "image-query"),
                           embeddings=np.atleast_2d(emb), origin="image")
        return {"handle": self.queries.put(entry), "fallback": bool(fallback),
                "name": entry.name}

    def detect(self, payload: dict) -> dict:
        t0 = time.perf_counter()
        if "image" not in payload:
            raise BadRequest("image is required")
        image = _decode_image(payload["image"])
        threshold = payload.get("threshold", 0.0)
        if not isinstance(threshold, (int, float)) or not 0.0 <= threshold <= 1.0:
            raise BadRequest("threshold must lie in [0, 1]")
        top_k = payload.get("top_k", 100)
        if not isinstance(top_k, int) or top_k < 1:
            raise BadRequest("top_k must be a positive integer")

        entries: list[QueryEntry] = []
        text_queries = payload.get("text_queries", [])
        if text_queries:
            if not all(isinstance(t, str) for t in text_queries):
                raise BadRequest("text_queries must be strings")
            entries.extend(embed_text_queries(self.model, text_queries,
                                              mode="eval").entries)
        for spec in payload.get("query_handles", []):
            if isinstance(spec, str):
                entries.append(self.queries.get(spec))
            elif isinstance(spec, dict) and isinstance(spec.get("handles"), list):
                # few-shot group: average the referenced embeddings server-side
                members = [self.queries.get(h) for h in spec["handles"]]
                pooled = fewshot_average(
                    [np.atleast_2d(m.embeddings).mean(axis=0) for m in members])
                name = spec.get("name") or "+".join(m.name for m in members)
                entries.append(QueryEntry(name=name, embeddings=pooled[None, :],
                                          origin=members[0].origin))
            else:
                raise BadRequest("query_handles entries must be strings or "
                                 "{handles: [...], name}")
        image_queries = payload.get("image_queries", [])
        groups: dict[str, list[np.ndarray]] = {}
        fallbacks = []
        for i, spec in enumerate(image_queries):
            patch = QueryPatch(image=_decode_image(spec["image"]),
                               box=_parse_box(spec["box"]))
            with self.semaphore:
                emb, fb = extract_image_query(self.model, patch)
            fallbacks.append(bool(fb))
            group = str(spec.get("k_shot_group", f"image{i}"))
            groups.setdefault(group, []).append(emb)
        for group, embs in sorted(groups.items()):
            entries.append(QueryEntry(name=f"image:{group}",
                                      embeddings=fewshot_average(embs)[None, :],
                                      origin="image"))
        if not entries:
            raise BadRequest("no queries: provide text_queries, image_queries, "
                             "or query_handles")
        with self.semaphore:
            dets = self.model.detect(image, QuerySet(entries),
                                     threshold=float(threshold), top_k=top_k)
        return {
            "detections": [{"bbox": [min(1.0, max(0.0, v)) for v in d.box.to_xyxy()],
                            "score": d.score,
                            "query_index": d.query_index,
                            "query_name": d.query_name} for d in dets],
            "image_query_fallbacks": fallbacks,
            "timing_ms": (time.perf_counter() - t0) * 1000.0,
        }


class _Handler(BaseHTTPRequestHandler):
    service: InferenceService  # injected by serve()

    def log_message(self, fmt, *args):  # quiet by default
        pass

    def _send(self, code: int, payload: dict):
        body = json.dumps(payload).encode("utf-8")
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(body)

    def do_OPTIONS(self):
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()

    def do_GET(self):
        if self.path == "/v1/health":
            self._send(200, self.service.health())
        elif self.path == "/v1/model":
            self._send(200, self.service.model_info())
        else:
            self._send(404, {"error": "not found"})

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        if length > 4 * MAX_IMAGE_BYTES:
            self._send(413, {"error": "request body too large"})
            return
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
        except Exception:
            self._send(400, {"error": "malformed JSON body"})
            return
        routes = {
            "/v1/detect": self.service.detect,
            "/v1/queries/text": self.service.text_queries,
            "/v1/queries/image": self.service.image_query,
        }
        handler = routes.get(self.path)
        if handler is None:
            self._send(404, {"error": "not found"})
            return
        try:
            self._send(200, handler(payload))
        except BadRequest as exc:
            self._send(400, {"error": str(exc)})
        except PayloadTooLarge as exc:
            self._send(413, {"error": str(exc)})
        except Exception as exc:
            error_id = uuid.uuid4().hex[:8]
            self._send(500, {"error": "internal error", "error_id": error_id,
                             "detail": str(exc)})


def make_server(model: DetectionModel, host: str = "127.0.0.1", port: int = 0,
                workers: int | None = None) -> ThreadingHTTPServer:
    service = InferenceService(model, workers=workers)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer((host, port), handler)


def serve(model: DetectionModel, host: str = "127.0.0.1", port: int = 8000,
          workers: int | None = None):
    server = make_server(model, host, port, workers)
    print(f"serving on http://{host}:{server.server_address[1]}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        server.shutdown()
