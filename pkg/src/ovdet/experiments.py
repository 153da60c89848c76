"""Frozen desk-scale benchmark: data specs, encoder size, training budgets.

Every acceptance-grade experiment (pre-training quality, detection overfit,
compositional zero-shot transfer, one-shot conditioning) runs through these
configurations so results stay comparable across tests, demos, and the CLI.

The geometry is sized for CPU wall-clock budgets: 40 px pre-training images
with large shapes (a shape spans several 8 px patches), 48 px detection
images, and a width-64 / depth-2 tower pair. Pre-training is shared across
fine-tuning seeds, matching the reporting convention of averaging over
fine-tuning runs.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from ovdet.configs import EncoderConfig
from ovdet.data.synth import SynthData, SynthSpec, synth_dataset
from ovdet.evaluation import evaluate_model
from ovdet.model import DetectionModel
from ovdet.nn.params import ParamStore
from ovdet.tokenizer import Vocabulary, build_vocab_for
from ovdet.training import MetricsLog, TrainConfig, finetune, pretrain

HELD_OUT = ("red triangle", "green circle", "blue cross", "yellow square")

# Pre-training scenes: one large object per image, so the attention-pooled
# embedding is essentially that object's representation; this transfers much
# better to per-token readout than multi-object pooling does.
PRETRAIN_SPEC = SynthSpec(image_size=40, n_train=12288, n_eval=128, max_objects=1,
                          min_radius=0.18, max_radius=0.40)

# Detection scenes: held-out combos never appear as localized labels; the
# atomic color/shape side labels keep the class projection factorized, which
# is what lets text-side composition reach the held-out combinations.
DETECTION_SPEC = SynthSpec(image_size=48, n_train=1024, n_eval=96, max_objects=2,
                           min_radius=0.25, max_radius=0.42, held_out=HELD_OUT,
                           atomic_labels=True)

OVERFIT_SPEC = SynthSpec(image_size=48, n_train=8, n_eval=0, max_objects=4)

ENCODER = EncoderConfig(image_size=40, patch_size=8, depth=2, width=64,
                        n_heads=4, mlp_dim=128, text_vocab=0)

PRETRAIN_CONFIG = TrainConfig(stage="pretrain", steps=6000, batch_size=32,
                              learning_rate=2e-3, warmup_steps=200,
                              eval_interval=1500)

FINETUNE_CONFIG = TrainConfig(stage="finetune", steps=2500, batch_size=8,
                              learning_rate=3e-3, text_lr_ratio=0.01,
                              image_size=48, warmup_steps=200, eval_interval=0,
                              mosaic_max_grid=1, crop_enabled=False)

OVERFIT_CONFIG = TrainConfig(stage="finetune", steps=1000, batch_size=8,
                             learning_rate=2e-3, text_lr_ratio=0.01,
                             image_size=48, warmup_steps=50, eval_interval=100,
                             mosaic_max_grid=1, crop_enabled=False,
                             merge_instances_enabled=False, use_pretrained=False)


def benchmark_vocab() -> Vocabulary:
    return build_vocab_for(DETECTION_SPEC.categories())


def encoder_for(vocab: Vocabulary) -> EncoderConfig:
    return replace(ENCODER, text_vocab=len(vocab))


def make_pretrain_data(seed: int = 100) -> SynthData:
    return synth_dataset(PRETRAIN_SPEC, np.random.default_rng(seed))


def make_detection_data(seed: int = 200) -> SynthData:
    return synth_dataset(DETECTION_SPEC, np.random.default_rng(seed))


def run_pretraining(data: SynthData, vocab: Vocabulary, seed: int = 0,
                    log: MetricsLog | None = None) -> tuple[ParamStore, MetricsLog]:
    cfg = replace(PRETRAIN_CONFIG, seed=seed)
    return pretrain(cfg, data.train_captions, vocab, encoder_for(vocab),
                    eval_pairs=data.eval_captions, log=log)


def run_finetune(det: SynthData, vocab: Vocabulary,
                 pretrained: ParamStore | None, seed: int = 0,
                 steps: int | None = None,
                 location_bias: bool = True) -> DetectionModel:
    cfg = replace(FINETUNE_CONFIG, seed=seed,
                  use_pretrained=pretrained is not None,
                  location_bias=location_bias,
                  **({"steps": steps} if steps else {}))
    enc = encoder_for(vocab)
    model, _ = finetune(cfg, [det.train], vocab, enc, pretrained=pretrained,
                        pretrain_cfg=enc)
    return model


def zero_shot_scores(model: DetectionModel, det: SynthData,
                     threshold: float = 0.03) -> dict:
    combos = sorted(c for c in det.categories if " " in c)
    return evaluate_model(model, det.eval, combos, held_out=list(det.held_out),
                          threshold=threshold)


def retrieval_score(store: ParamStore, vocab: Vocabulary, data: SynthData) -> float:
    from ovdet.training import retrieval_top1
    return retrieval_top1(store, encoder_for(vocab), vocab, data.eval_captions)


def make_overfit_data(seed: int = 300) -> SynthData:
    return synth_dataset(OVERFIT_SPEC, np.random.default_rng(seed))


def run_overfit(det: SynthData, vocab: Vocabulary,
                location_bias: bool = True) -> list[tuple[int, float]]:
    """Fine-tune from scratch on the 8-image set; returns (step, train AP50)
    samples at every evaluation interval."""
    cfg = replace(OVERFIT_CONFIG, location_bias=location_bias)
    hits: list[tuple[int, float]] = []

    def hook(step: int, model: DetectionModel) -> dict:
        res = evaluate_model(model, det.train, det.categories, threshold=0.05)
        hits.append((step + 1, res["ap50"]))
        return {"train_ap50": res["ap50"]}

    enc = encoder_for(vocab)
    finetune(cfg, [det.train], vocab, enc, eval_hook=hook)
    return hits
