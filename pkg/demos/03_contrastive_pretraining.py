"""Stage one of the recipe: contrastive image-text pre-training.

Trains the dual encoder on (scene, caption) pairs and tracks held-out
image->text retrieval. Pass --full for the benchmark budget (~5 minutes);
the default is a quick taste.
"""

import argparse
import pickle
from pathlib import Path

import numpy as np

from ovdet import experiments as bench
from ovdet.training import MetricsLog, pretrain

parser = argparse.ArgumentParser()
parser.add_argument("--full", action="store_true",
                    help="benchmark budget (6000 steps) instead of a quick run")
args = parser.parse_args()

data = bench.make_pretrain_data()
vocab = bench.benchmark_vocab()
print(f"{len(data.train_captions)} caption pairs, vocab of {len(vocab)} tokens")
print("example caption:", data.train_captions[0][1])

if args.full:
    cfg = bench.PRETRAIN_CONFIG
else:
    from dataclasses import replace
    cfg = replace(bench.PRETRAIN_CONFIG, steps=800, eval_interval=200)

store, log = pretrain(cfg, data.train_captions, vocab, bench.encoder_for(vocab),
                      eval_pairs=data.eval_captions)
for r in log.records:
    if "retrieval_top1" in r:
        print(f"  step {r['step'] + 1:5d}  loss {r['loss']:.3f}  "
              f"held-out retrieval {r['retrieval_top1']:.3f}")

out = Path("demo_out")
out.mkdir(exist_ok=True)
with open(out / "pretrained.pkl", "wb") as fh:
    pickle.dump({"params": {k: t.data for k, t in store.items()},
                 "vocab_tokens": vocab.tokens}, fh)
print(f"cached encoders to {out / 'pretrained.pkl'} "
      f"(used by the later demos)")
