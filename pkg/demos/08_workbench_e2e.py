"""End-to-end workbench check against the trained detector.

Serves demo_out/detector.ckpt, builds a fixture (a donor scene with a query
box drawn around a held-out object, and a target scene containing another
instance of that category), then runs the frontend's live vitest suite,
which drives the session layer against the real service: the drawn box must
highlight the matching shape in the target image, and replaying the session
history must reproduce identical overlays.

Requires demo_out/detector.ckpt (from 05_zero_shot_transfer.py) and an
installed frontend (cd frontend && npm install).
"""

import base64
import json
import os
import subprocess
import threading
from pathlib import Path

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
url = f"http://127.0.0.1:{server.server_address[1]}"
print("serving the trained detector at", url)

det = bench.make_detection_data()
category = det.held_out[0]
scenes = [ex for ex in det.eval
          if any(category in inst.labels for inst in ex.instances)]
if len(scenes) < 2:
    raise SystemExit(f"need two eval scenes containing {category!r}")
donor, target = scenes[0], scenes[1]
donor_box = next(i.box for i in donor.instances if category in i.labels)
truth = next(i.box for i in target.instances if category in i.labels)

fixture = {
    "serviceUrl": url,
    "category": category,
    "donorB64": base64.b64encode(image_to_png_bytes(donor.image)).decode(),
    "donorBox": {"cx": donor_box.cx, "cy": donor_box.cy,
                 "w": donor_box.w, "h": donor_box.h},
    "targetB64": base64.b64encode(image_to_png_bytes(target.image)).decode(),
    "targetTruth": list(truth.to_xyxy()),
}
fixture_path = Path("demo_out/e2e-fixture.json").resolve()
fixture_path.write_text(json.dumps(fixture))
print(f"fixture: query box on a {category!r} in {donor.example_id}, "
      f"target {target.example_id}")

env = dict(os.environ, OVDET_E2E_FIXTURE=str(fixture_path))
result = subprocess.run(["npm", "test", "--", "tests/e2e.workbench.test.ts"],
                        cwd="frontend", env=env)
server.shutdown()
raise SystemExit(result.returncode)
