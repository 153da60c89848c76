"""Serve a checkpoint over HTTP and exercise every endpoint.

Starts the service in-process on a free port, then acts as a client:
health, model info, text-query handles, an image-conditioned query with
its fallback flag, and a detect call mixing both. The browser workbench
under frontend/ speaks exactly this protocol.

Expects demo_out/detector.ckpt from 05_zero_shot_transfer.py.
"""

import base64
import json
import threading
import urllib.request
from pathlib import Path

import numpy as np

from ovdet import experiments as bench
from ovdet.checkpoint import load_checkpoint
from ovdet.data.federated import image_to_png_bytes
from ovdet.model import DetectionModel
from ovdet.server import make_server
from ovdet.tokenizer import Vocabulary

ckpt = Path("demo_out/detector.ckpt")
if not ckpt.exists():
    raise SystemExit("run 05_zero_shot_transfer.py first")
vocab = Vocabulary.load(ckpt.with_suffix(".vocab"))
params, cfg, _ = load_checkpoint(ckpt, vocab)
server = make_server(DetectionModel(params, cfg, vocab), port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print("service at", base)


def call(path, payload=None):
    data = json.dumps(payload).encode() if payload is not None else None
    with urllib.request.urlopen(urllib.request.Request(base + path, data=data)) as r:
        return json.loads(r.read())


print("health:", call("/v1/health"))
print("model width:", call("/v1/model")["model"]["encoder"]["width"])

det = bench.make_detection_data()
scene = det.eval[0]
png = base64.b64encode(image_to_png_bytes(scene.image)).decode()

handles = call("/v1/queries/text", {"categories": sorted(scene.positive),
                                    "mode": "eval"})["queries"]
print("text query handles:", [(q["name"], q["n_prompts"]) for q in handles])

inst = scene.instances[0]
image_q = call("/v1/queries/image", {"image": png,
                                     "box": [inst.box.cx, inst.box.cy,
                                             inst.box.w, inst.box.h]})
print("image query fallback:", image_q["fallback"])

result = call("/v1/detect", {
    "image": png,
    "query_handles": [handles[0]["handle"], image_q["handle"]],
    "threshold": 0.05, "top_k": 5,
})
print(f"detections ({result['timing_ms']:.0f} ms):")
for d in result["detections"]:
    print(f"  {d['query_name']:20s} score {d['score']:.3f} bbox "
          f"{[round(v, 2) for v in d['bbox']]}")
print("\nto try the browser UI: (cd frontend && npm run build) and open "
      "frontend/index.html, pointing it at a long-lived `ovdet serve` URL")
server.shutdown()
