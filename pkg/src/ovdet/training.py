"""Two-stage training: contrastive pre-training, then detection fine-tuning.

Fine-tuning follows the full recipe: instance merging, random crop with box
filtering, mosaic scale augmentation, pseudo-negative sampling, random
prompt templates, per-example gradient clipping, cosine decay, and a text
tower learning rate a configurable factor below the image tower's. Every
recipe ingredient is a config toggle so each ablation row is one config.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ovdet.configs import EncoderConfig, ModelConfig
from ovdet.data.augment import CropConstraints, build_mosaic, merge_instances, random_crop
from ovdet.data.federated import FederatedExample, max_instances
from ovdet.data.prompts import apply_prompt
from ovdet.data.sampling import (
    CategoryFrequencyTable,
    MosaicConfig,
    mix_datasets,
    mosaic_probabilities,
    sample_mosaic_grid,
    sample_pseudo_negatives,
)
from ovdet.encoders import (
    contrastive_loss,
    encode_text,
    init_pretrain_params,
    pretrain_image_embedding,
)
from ovdet.errors import ConfigError
from ovdet.heads import query_logits
from ovdet.losses import FocalParams, build_targets, detection_loss
from ovdet.model import DetectionModel
from ovdet.nn.optim import (
    AdamState,
    OptimizerConfig,
    adam_step,
    clip_by_global_norm,
    cosine_lr,
    per_example_clip,
    sgd_step,
)
from ovdet.nn.params import ParamStore
from ovdet.tokenizer import Vocabulary


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "finetune"  # "pretrain" | "finetune"
    steps: int = 1000
    batch_size: int = 8
    seed: int = 0
    learning_rate: float = 3e-3
    text_lr_ratio: float = 0.01  # finetune: text LR = image LR * ratio
    head_lr_multiplier: float = 1.0  # fresh detection heads may train faster
    weight_decay: float = 0.0
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_per_example_grad_norm: float = 1.0
    image_size: int = 48
    eval_interval: int = 200
    checkpoint_interval: int = 0
    checkpoint_dir: str = ""
    # focal loss
    focal_alpha: float = 0.3
    focal_gamma: float = 2.0
    # recipe toggles (one per ablation row)
    use_train_prompts: bool = True
    eval_prompt_ensemble: bool = True
    random_negatives: bool = True
    min_negatives: int = 50
    mosaic_max_grid: int = 3
    merge_instances_enabled: bool = True
    merge_iou: float = 0.9
    location_bias: bool = True
    crop_enabled: bool = True
    crop_retention: float = 0.6
    remove_crowd: bool = True
    keep_heldout_labels: bool = False
    dataset_ratios: tuple[float, ...] = (1.0,)
    single_dataset: int | None = None
    use_pretrained: bool = True

    def __post_init__(self):
        if self.stage not in ("pretrain", "finetune"):
            raise ConfigError(f"unknown stage {self.stage!r}")
        if not 0.0 <= self.text_lr_ratio <= 1.0:
            raise ConfigError("text_lr_ratio must lie in [0, 1]")

    def optimizer(self) -> OptimizerConfig:
        return OptimizerConfig(
            beta1=self.beta1, beta2=self.beta2, epsilon=self.epsilon,
            base_lr_image=self.learning_rate,
            base_lr_text=self.learning_rate * (self.text_lr_ratio
                                               if self.stage == "finetune" else 1.0),
            weight_decay=self.weight_decay,
            max_per_example_grad_norm=self.max_per_example_grad_norm)

    def focal(self) -> FocalParams:
        return FocalParams(alpha=self.focal_alpha, gamma=self.focal_gamma)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "TrainConfig":
        d = json.loads(text)
        if "dataset_ratios" in d:
            d["dataset_ratios"] = tuple(d["dataset_ratios"])
        return TrainConfig(**d)

    @staticmethod
    def load(path: str | Path) -> "TrainConfig":
        return TrainConfig.from_json(Path(path).read_text(encoding="utf-8"))


class MetricsLog:
    """JSON-lines metrics: one {step, loss, components, lr} record per entry."""

    def __init__(self, path: str | Path | None = None):
        self.records: list[dict] = []
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def append(self, record: dict):
        self.records.append(record)
        if self.path:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


# ---------------------------------------------------------------- pretrain


def retrieval_top1(store: ParamStore, enc_cfg: EncoderConfig, vocab: Vocabulary,
                   pairs: Sequence[tuple[np.ndarray, str]]) -> float:
    """Image->text retrieval accuracy; a hit may match any identical caption."""
    from ovdet.nn.tensor import no_grad

    captions = [c for _, c in pairs]
    with no_grad():
        img = pretrain_image_embedding(store, enc_cfg,
                                       np.stack([im for im, _ in pairs])).data
        txt = encode_text(store, enc_cfg,
                          [vocab.encode(c, enc_cfg.text_max_len) for c in captions]).data
    img = img / np.linalg.norm(img, axis=1, keepdims=True)
    txt = txt / np.linalg.norm(txt, axis=1, keepdims=True)
    picks = np.argmax(img @ txt.T, axis=1)
    hits = sum(captions[p] == captions[i] for i, p in enumerate(picks))
    return hits / len(pairs)


def pretrain(cfg: TrainConfig, pairs: Sequence[tuple[np.ndarray, str]],
             vocab: Vocabulary, enc_cfg: EncoderConfig,
             eval_pairs: Sequence[tuple[np.ndarray, str]] | None = None,
             log: MetricsLog | None = None) -> tuple[ParamStore, MetricsLog]:
    """Minimize the symmetric contrastive loss over (image, caption) batches."""
    if enc_cfg.text_vocab != len(vocab):
        enc_cfg = replace(enc_cfg, text_vocab=len(vocab))
    store = init_pretrain_params(enc_cfg, seed=cfg.seed).astype(np.float32)
    rng = np.random.default_rng(cfg.seed + 1)
    opt_cfg = cfg.optimizer()
    state = AdamState()
    log = log or MetricsLog()
    order: list[int] = []
    for step in range(cfg.steps):
        if len(order) < cfg.batch_size:
            order = list(rng.permutation(len(pairs))) + order
        take = [order.pop() for _ in range(cfg.batch_size)]
        images = np.stack([pairs[i][0] for i in take]).astype(np.float32)
        ids = [vocab.encode(pairs[i][1], enc_cfg.text_max_len) for i in take]
        store.zero_grad()
        img_emb = pretrain_image_embedding(store, enc_cfg, images, train=True, rng=rng)
        txt_emb = encode_text(store, enc_cfg, ids, train=True, rng=rng)
        loss = contrastive_loss(img_emb, txt_emb, store["temp.log_tau"])
        loss.backward()
        grads = clip_by_global_norm(store.grads(), 1.0)
        lr = cosine_lr(step, cfg.steps, cfg.learning_rate, cfg.warmup_steps)
        adam_step(store, grads, state, opt_cfg, lr)
        record = {"step": step, "loss": float(loss.data), "lr": lr}
        if eval_pairs is not None and cfg.eval_interval and \
                (step + 1) % cfg.eval_interval == 0:
            record["retrieval_top1"] = retrieval_top1(store, enc_cfg, vocab, eval_pairs)
        log.append(record)
    return store, log


# ---------------------------------------------------------------- finetune


def build_query_space(ex: FederatedExample, table: CategoryFrequencyTable | None,
                      cfg: TrainConfig, rng: np.random.Generator) -> list[str]:
    """Per-image label space: positives, real negatives, pseudo-negatives."""
    space = sorted(ex.positive) + sorted(ex.negative)
    if cfg.random_negatives and table is not None:
        space += sample_pseudo_negatives(ex, table, cfg.min_negatives, rng)
    return space


def prepare_example(base_stream, cfg: TrainConfig, rng: np.random.Generator,
                    mosaic_cfg: MosaicConfig) -> FederatedExample:
    """One augmented training example: merge -> crop -> mosaic."""
    k = sample_mosaic_grid(mosaic_cfg, rng)
    tiles = []
    for _ in range(k * k):
        ex = next(base_stream)
        if cfg.remove_crowd and any(i.crowd for i in ex.instances):
            instances = [i for i in ex.instances if not i.crowd]
            positive = set().union(*[i.labels for i in instances]) if instances else set()
            ex = FederatedExample(image=ex.image, instances=instances,
                                  positive=positive, negative=set(ex.negative),
                                  example_id=ex.example_id)
        if cfg.merge_instances_enabled:
            merged = merge_instances(ex.instances, cfg.merge_iou, rng)
            ex = FederatedExample(image=ex.image, instances=merged,
                                  positive=set(ex.positive), negative=set(ex.negative),
                                  example_id=ex.example_id)
        if cfg.crop_enabled:
            ex = random_crop(ex, CropConstraints(retention=cfg.crop_retention), rng)
        tiles.append(ex)
    return build_mosaic(tiles, k, cfg.image_size)


def finetune(cfg: TrainConfig, datasets: Sequence[Sequence[FederatedExample]],
             vocab: Vocabulary, enc_cfg: EncoderConfig,
             pretrained: ParamStore | None = None,
             pretrain_cfg: EncoderConfig | None = None,
             log: MetricsLog | None = None,
             eval_hook: Callable[[int, DetectionModel], dict] | None = None
             ) -> tuple[DetectionModel, MetricsLog]:
    """Detection fine-tuning over a federated example stream.

    ``datasets`` is one or more example lists mixed at ``cfg.dataset_ratios``
    (or a single source when ``cfg.single_dataset`` picks one). Per step and
    per example: build the query space, embed prompted queries, compute the
    matching loss, clip the example's gradient, then average and step with
    split learning rates.
    """
    if cfg.use_pretrained and pretrained is None:
        raise ConfigError("config demands pre-trained encoders but none were given")
    enc_cfg = replace(enc_cfg, text_vocab=len(vocab), image_size=cfg.image_size)
    model_cfg = ModelConfig(encoder=enc_cfg, location_bias=cfg.location_bias)
    if pretrained is not None and cfg.use_pretrained:
        model = DetectionModel.from_pretrained(
            pretrained, pretrain_cfg or enc_cfg, model_cfg, vocab, seed=cfg.seed)
    else:
        model = DetectionModel.from_scratch(model_cfg, vocab, seed=cfg.seed)
    model.params = model.params.astype(np.float32)

    if cfg.single_dataset is not None:
        sources = [datasets[cfg.single_dataset]]
        ratios: tuple[float, ...] = (1.0,)
    else:
        sources = list(datasets)
        ratios = cfg.dataset_ratios if len(cfg.dataset_ratios) == len(sources) \
            else tuple([1.0 / len(sources)] * len(sources))

    # a k x k mosaic can carry k^2 times the base instance count
    cap = max(max_instances(src) for src in sources) * cfg.mosaic_max_grid ** 2
    enc_cfg.check_capacity(cap)

    rng = np.random.default_rng(cfg.seed + 2)
    stream = mix_datasets(sources, ratios, rng)
    mosaic_cfg = MosaicConfig(cfg.mosaic_max_grid,
                              mosaic_probabilities(cfg.mosaic_max_grid))
    # frequency table over the raw mixed stream, computed once and frozen
    table = CategoryFrequencyTable.from_examples(
        [ex for src in sources for ex in src]) if cfg.random_negatives else None

    opt_cfg = cfg.optimizer()
    state = AdamState()
    fp = cfg.focal()
    log = log or MetricsLog()
    text_store = model.text_params()
    head_store = model.params.subset(lambda n: n.startswith("head."))
    image_store = model.params.subset(
        lambda n: not n.startswith("txt.") and not n.startswith("head."))

    for step in range(cfg.steps):
        per_example_grads = []
        agg = {"total": 0.0, "cls": 0.0, "l1": 0.0, "giou": 0.0}
        for _ in range(cfg.batch_size):
            ex = prepare_example(stream, cfg, rng, mosaic_cfg)
            space = build_query_space(ex, table, cfg, rng)
            if not space:
                continue
            prompted = [apply_prompt(c, "train", rng, enabled=cfg.use_train_prompts)
                        for c in space]
            model.params.zero_grad()
            ids = [vocab.encode(p, enc_cfg.text_max_len) for p in prompted]
            txt = encode_text(model.params, enc_cfg, ids, train=True, rng=rng)
            boxes, emb, scale, shift = model.forward(
                ex.image.astype(np.float32), train=True, rng=rng)
            logits = query_logits(emb, scale, shift, txt)
            gt_boxes = np.array([inst.box.as_array() for inst in ex.instances]) \
                if ex.instances else np.zeros((0, 4))
            targets = build_targets([inst.labels for inst in ex.instances], space)
            terms = detection_loss(boxes.reshape(boxes.shape[-2], 4),
                                   logits.reshape(logits.shape[-2], logits.shape[-1]),
                                   gt_boxes, targets, fp)
            terms["total"].backward()
            per_example_grads.append(model.params.grads())
            for key in agg:
                agg[key] += float(terms[key].data)
        if not per_example_grads:
            continue
        grads = per_example_clip(per_example_grads, cfg.max_per_example_grad_norm)
        lr = cosine_lr(step, cfg.steps, cfg.learning_rate, cfg.warmup_steps)
        groups = [(image_store, lr),
                  (head_store, lr * cfg.head_lr_multiplier),
                  (text_store, lr * cfg.text_lr_ratio)]
        first = True
        for store_grp, grp_lr in groups:
            if grp_lr <= 0.0 or len(store_grp) == 0:
                continue  # frozen group (e.g. text encoder at ratio 0)
            grp_grads = {k: grads[k] for k in store_grp.names()}
            adam_step(store_grp, grp_grads, state, opt_cfg, grp_lr, advance_step=first)
            first = False
        n = len(per_example_grads)
        record = {"step": step, "lr": lr,
                  "loss": agg["total"] / n,
                  "components": {k: agg[k] / n for k in ("cls", "l1", "giou")}}
        if eval_hook is not None and cfg.eval_interval and \
                (step + 1) % cfg.eval_interval == 0:
            record.update(eval_hook(step, model))
        log.append(record)
        if cfg.checkpoint_interval and cfg.checkpoint_dir and \
                (step + 1) % cfg.checkpoint_interval == 0:
            from ovdet.checkpoint import save_checkpoint
            save_checkpoint(model.params, model.cfg, vocab,
                            Path(cfg.checkpoint_dir) / f"step{step + 1:06d}.ckpt",
                            stage="finetune")
    return model, log


# ------------------------------------------------------------------ ablation


ABLATION_ROWS: list[tuple[int, str, dict]] = [
    (1, "single dataset (second source only)", {"single_dataset": 1}),
    (2, "single dataset (first source only)", {"single_dataset": 0}),
    (3, "same LR for image and text encoders", {"text_lr_ratio": 1.0}),
    (4, "no prompt ensembling at inference", {"eval_prompt_ensemble": False}),
    (5, "no prompts (train or inference)", {"use_train_prompts": False,
                                            "eval_prompt_ensemble": False}),
    (6, "no random negatives", {"random_negatives": False}),
    (7, "no mosaics", {"mosaic_max_grid": 1}),
    (8, "no mosaics, train 2x longer", {"mosaic_max_grid": 1, "_steps_mult": 2}),
    (9, "no mosaics, train 3x longer", {"mosaic_max_grid": 1, "_steps_mult": 3}),
    (10, "do not merge overlapping instances", {"merge_instances_enabled": False}),
    (11, "no location bias in box predictor", {"location_bias": False}),
    (12, "do not filter out any cropped boxes", {"crop_retention": 0.0}),
    (13, "filter out all cropped boxes", {"crop_retention": 1.0}),
    (14, "do not remove crowd instances", {"remove_crowd": False}),
    (15, "keep held-out labels in training", {"keep_heldout_labels": True}),
]


def ablation_matrix(base: TrainConfig) -> list[tuple[int, str, TrainConfig]]:
    """One fine-tuning config per ablation row, derived from the baseline."""
    out = []
    for row, description, overrides in ABLATION_ROWS:
        overrides = dict(overrides)
        mult = overrides.pop("_steps_mult", 1)
        cfg = replace(base, steps=base.steps * mult, **overrides)
        out.append((row, description, cfg))
    return out


# ------------------------------------------------------------------- probes


def lr_ratio_probe(ratio: float, lr: float = 0.1) -> tuple[float, float]:
    """SGD-mode probe: identical gradients through both towers must produce
    parameter deltas in exactly the configured ratio."""
    store = ParamStore()
    from ovdet.nn.tensor import Tensor
    store["img.w"] = Tensor(np.ones(4), requires_grad=True)
    store["txt.w"] = Tensor(np.ones(4), requires_grad=True)
    grads = {"img.w": np.full(4, 0.5), "txt.w": np.full(4, 0.5)}
    before = {k: t.data.copy() for k, t in store.items()}
    sgd_step(store.subset(lambda n: n.startswith("img.")),
             {"img.w": grads["img.w"]}, lr)
    sgd_step(store.subset(lambda n: n.startswith("txt.")),
             {"txt.w": grads["txt.w"]}, lr * ratio)
    img_delta = float(np.linalg.norm(store["img.w"].data - before["img.w"]))
    txt_delta = float(np.linalg.norm(store["txt.w"].data - before["txt.w"]))
    return img_delta, txt_delta
