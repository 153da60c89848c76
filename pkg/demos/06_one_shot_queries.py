"""One-shot image-conditioned detection.

Instead of naming a category, hand the model an example patch: the class
embedding of the prediction overlapping the patch box (the most dissimilar
one - background predictions all resemble each other) becomes the query.
Averaging several patches (k-shot) sharpens it further.

Expects demo_out/detector.ckpt from 05_zero_shot_transfer.py.
"""

from pathlib import Path

import numpy as np

from ovdet import experiments as bench
from ovdet.checkpoint import load_checkpoint
from ovdet.evaluation import one_shot_ap50
from ovdet.model import DetectionModel
from ovdet.queries import QueryPatch, extract_image_query, image_query_set
from ovdet.tokenizer import Vocabulary

ckpt = Path("demo_out/detector.ckpt")
if not ckpt.exists():
    raise SystemExit("run 05_zero_shot_transfer.py first")
vocab = Vocabulary.load(ckpt.with_suffix(".vocab"))
params, cfg, _ = load_checkpoint(ckpt, vocab)
model = DetectionModel(params, cfg, vocab)

det = bench.make_detection_data()
held = list(det.held_out)

# pick a query patch showing a held-out object, detect in another image
donor = next(ex for ex in det.eval
             if any(held[0] in inst.labels for inst in ex.instances))
patch_box = next(inst.box for inst in donor.instances if held[0] in inst.labels)
emb, fallback = extract_image_query(model, QueryPatch(donor.image, patch_box))
print(f"query patch of a {held[0]!r}: fallback={fallback}")

target = next(ex for ex in det.eval
              if ex.example_id != donor.example_id
              and any(held[0] in inst.labels for inst in ex.instances))
qs, _ = image_query_set(model, [QueryPatch(donor.image, patch_box)], name=held[0])
dets = model.detect(target.image, qs, threshold=0.0, top_k=3)
truth = next(inst.box for inst in target.instances if held[0] in inst.labels)
print(f"target truth box: cx={truth.cx:.2f} cy={truth.cy:.2f}")
for d in dets:
    print(f"  detected score={d.score:.3f} cx={d.box.cx:.2f} cy={d.box.cy:.2f}")

print("\nprotocol AP50 on unseen categories (this takes a minute):")
for k in (1, 10):
    result = one_shot_ap50(model, det.eval, held, k=k,
                           rng=np.random.default_rng(0))
    print(f"  k={k:2d}: AP50 {result['ap50']:.3f} "
          f"(fallback rate {result['fallback_rate']:.2f})")
