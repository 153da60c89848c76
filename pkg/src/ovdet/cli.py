"""Command-line interface.

Subcommands: synth-data, pretrain, finetune, evaluate, detect, extract-query,
ablate, serve. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import base64
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ovdet.configs import EncoderConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> _Parser:
    p = _Parser(prog="ovdet", description="Open-vocabulary detection toolkit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, **kw):
        return sub.add_parser(name, parents=[common], **kw)

    sd = add("synth-data", help="generate a synthetic shapes dataset")
    sd.add_argument("--out", required=True)
    sd.add_argument("--image-size", type=int, default=48)
    sd.add_argument("--n-train", type=int, default=512)
    sd.add_argument("--n-eval", type=int, default=128)
    sd.add_argument("--colors", default="red,green,blue,yellow")
    sd.add_argument("--shapes", default="circle,square,triangle,cross")
    sd.add_argument("--held-out", default="")
    sd.add_argument("--max-objects", type=int, default=4)
    sd.add_argument("--min-radius", type=float, default=0.10)
    sd.add_argument("--max-radius", type=float, default=0.18)
    sd.add_argument("--inline-pixels", action="store_true",
                    help="embed images as base64 PNG instead of files")

    pt = add("pretrain", help="contrastive image-text pre-training")
    pt.add_argument("--config", required=True)
    pt.add_argument("--data", required=True, help="dataset directory from synth-data")
    pt.add_argument("--out", required=True)
    pt.add_argument("--image-size", type=int, default=40)
    pt.add_argument("--patch-size", type=int, default=8)
    pt.add_argument("--depth", type=int, default=2)
    pt.add_argument("--width", type=int, default=64)
    pt.add_argument("--heads", type=int, default=4)
    pt.add_argument("--mlp-dim", type=int, default=128)

    ft = add("finetune", help="detection fine-tuning")
    ft.add_argument("--config", required=True)
    ft.add_argument("--data", required=True)
    ft.add_argument("--pretrained", default="")
    ft.add_argument("--out", required=True)

    ev = add("evaluate", help="AP evaluation on a dataset split")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="eval.json")
    ev.add_argument("--held-out", default="")
    ev.add_argument("--protocol", choices=["zeroshot", "oneshot"], default="zeroshot")
    ev.add_argument("--k-shot", type=int, default=1)
    ev.add_argument("--out", default="")
    ev.add_argument("--pr-csv", default="")

    dt = add("detect", help="detect on one image, JSON to stdout")
    dt.add_argument("--checkpoint", required=True)
    dt.add_argument("--image", required=True)
    dt.add_argument("--text", default="", help="comma-separated query strings")
    dt.add_argument("--image-query", default="",
                    help="PATH:cx,cy,w,h query patch specification")
    dt.add_argument("--threshold", type=float, default=0.1)
    dt.add_argument("--top-k", type=int, default=20)

    xq = add("extract-query", help="one-shot query embedding from a patch")
    xq.add_argument("--checkpoint", required=True)
    xq.add_argument("--image", required=True)
    xq.add_argument("--box", required=True, help="cx,cy,w,h normalized")

    ab = add("ablate", help="run recipe-ablation rows")
    ab.add_argument("--rows", required=True, help="comma-separated row numbers 1-15")
    ab.add_argument("--config", required=True)
    ab.add_argument("--data", required=True)
    ab.add_argument("--pretrained", default="")
    ab.add_argument("--out", required=True)
    ab.add_argument("--dry-run", action="store_true",
                    help="print the derived configs without training")

    sv = add("serve", help="HTTP inference service")
    sv.add_argument("--checkpoint", required=True)
    sv.add_argument("--port", type=int, default=8000)
    sv.add_argument("--host", default="127.0.0.1")
    sv.add_argument("--workers", type=int, default=0,
                    help="max concurrent forward passes (0 = logical cores)")
    return p


def _load_image(path: str) -> np.ndarray:
    from ovdet.data.federated import png_bytes_to_image
    return png_bytes_to_image(Path(path).read_bytes())


def _load_split(data_dir: str, name: str):
    from ovdet.data.federated import load_dataset
    return load_dataset(Path(data_dir) / name)


def _load_model(checkpoint: str, data_dir: str | None = None):
    from ovdet.checkpoint import load_checkpoint
    from ovdet.model import DetectionModel
    from ovdet.tokenizer import Vocabulary

    ckpt = Path(checkpoint)
    vocab_path = ckpt.with_suffix(".vocab")
    if not vocab_path.exists() and data_dir:
        vocab_path = Path(data_dir) / "vocab.txt"
    vocab = Vocabulary.load(vocab_path)
    params, cfg, header = load_checkpoint(ckpt, vocab)
    return DetectionModel(params, cfg, vocab), header


def cmd_synth_data(args) -> int:
    from ovdet.data.federated import save_dataset
    from ovdet.data.synth import SynthSpec, synth_dataset
    from ovdet.tokenizer import build_vocab_for

    held = tuple(s.strip() for s in args.held_out.split(",") if s.strip())
    spec = SynthSpec(colors=tuple(args.colors.split(",")),
                     shapes=tuple(args.shapes.split(",")),
                     image_size=args.image_size, n_train=args.n_train,
                     n_eval=args.n_eval, held_out=held,
                     max_objects=args.max_objects,
                     min_radius=args.min_radius, max_radius=args.max_radius)
    data = synth_dataset(spec, np.random.default_rng(args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    image_dir = None if args.inline_pixels else out / "images"
    save_dataset(data.train, out / "train.json", data.categories, image_dir)
    save_dataset(data.eval, out / "eval.json", data.categories, image_dir)
    captions = [{"id": f"cap{i:05d}", "caption": c}
                for i, (_, c) in enumerate(data.train_captions)]
    (out / "captions.json").write_text(json.dumps({
        "train": captions,
        "eval": [{"id": f"evalcap{i:05d}", "caption": c}
                 for i, (_, c) in enumerate(data.eval_captions)]}), encoding="utf-8")
    build_vocab_for(data.categories).save(out / "vocab.txt")
    (out / "meta.json").write_text(json.dumps({
        "categories": data.categories, "held_out": data.held_out,
        "image_size": spec.image_size}), encoding="utf-8")
    print(f"wrote {len(data.train)} train / {len(data.eval)} eval examples to {out}")
    return 0


def _captions_from_dataset(examples):
    from ovdet.data.synth import caption_for
    return [(ex.image, caption_for(ex.instances)) for ex in examples if ex.instances]


def cmd_pretrain(args) -> int:
    from ovdet.checkpoint import save_checkpoint
    from ovdet.configs import ModelConfig
    from ovdet.tokenizer import Vocabulary
    from ovdet.training import MetricsLog, TrainConfig, pretrain

    cfg = TrainConfig.load(args.config)
    train, _ = _load_split(args.data, "train.json")
    eval_ex, _ = _load_split(args.data, "eval.json")
    vocab = Vocabulary.load(Path(args.data) / "vocab.txt")
    enc = EncoderConfig(image_size=args.image_size, patch_size=args.patch_size,
                        depth=args.depth, width=args.width, n_heads=args.heads,
                        mlp_dim=args.mlp_dim, text_vocab=len(vocab))
    pairs = _captions_from_dataset(train)
    eval_pairs = _captions_from_dataset(eval_ex)
    out = Path(args.out)
    log = MetricsLog(out.with_suffix(".metrics.jsonl"))
    store, _ = pretrain(cfg, pairs, vocab, enc, eval_pairs=eval_pairs, log=log)
    save_checkpoint(store, ModelConfig(encoder=replace(enc, text_vocab=len(vocab))),
                    vocab, out, stage="pretrain")
    vocab.save(out.with_suffix(".vocab"))
    print(f"saved pre-trained encoders to {out}")
    return 0


def cmd_finetune(args) -> int:
    from ovdet.checkpoint import load_checkpoint, save_checkpoint
    from ovdet.tokenizer import Vocabulary
    from ovdet.training import MetricsLog, TrainConfig, finetune

    cfg = TrainConfig.load(args.config)
    train, _ = _load_split(args.data, "train.json")
    vocab = Vocabulary.load(Path(args.data) / "vocab.txt")
    pretrained = None
    pretrain_cfg = None
    if args.pretrained:
        pretrained, pre_model_cfg, _ = load_checkpoint(args.pretrained, vocab)
        pretrain_cfg = pre_model_cfg.encoder
    enc = pretrain_cfg or EncoderConfig(image_size=cfg.image_size, patch_size=8,
                                        depth=2, width=64, n_heads=4, mlp_dim=128,
                                        text_vocab=len(vocab))
    out = Path(args.out)
    log = MetricsLog(out.with_suffix(".metrics.jsonl"))
    model, _ = finetune(cfg, [train], vocab, enc, pretrained=pretrained,
                        pretrain_cfg=pretrain_cfg, log=log)
    save_checkpoint(model.params, model.cfg, vocab, out, stage="finetune")
    vocab.save(out.with_suffix(".vocab"))
    print(f"saved detector to {out}")
    return 0


def cmd_evaluate(args) -> int:
    from ovdet.evaluation import (
        SplitSpec,
        evaluate_model,
        one_shot_protocol,
        write_pr_csv,
        write_results_json,
    )

    model, _ = _load_model(args.checkpoint, args.data)
    examples, categories = _load_split(args.data, args.split)
    held = [s.strip() for s in args.held_out.split(",") if s.strip()]
    if args.protocol == "oneshot":
        ss = SplitSpec(held_out=tuple(held)) if held else SplitSpec(n_splits=4)
        result = one_shot_protocol(model, examples, ss, categories, k=args.k_shot)
    else:
        result = evaluate_model(model, examples, categories, held_out=held or None)
    if args.out:
        write_results_json(result, args.out)
    if args.pr_csv and "pr_curves" in result:
        write_pr_csv(result, args.pr_csv)
    print(json.dumps({k: v for k, v in result.items()
                      if k not in ("pr_curves", "per_category")}, indent=2,
                     sort_keys=True))
    return 0


def _detections_json(dets):
    return [{"bbox": list(d.box.to_xyxy()), "score": d.score,
             "query_index": d.query_index, "query_name": d.query_name}
            for d in dets]


def cmd_detect(args) -> int:
    from ovdet.boxes import Box
    from ovdet.queries import QueryEntry, QuerySet, embed_text_queries, image_query_set, QueryPatch

    model, _ = _load_model(args.checkpoint)
    image = _load_image(args.image)
    entries = []
    if args.text:
        categories = [t.strip() for t in args.text.split(",") if t.strip()]
        entries.extend(embed_text_queries(model, categories, mode="eval").entries)
    if args.image_query:
        path, _, boxspec = args.image_query.partition(":")
        cx, cy, w, h = (float(x) for x in boxspec.split(","))
        patch = QueryPatch(image=_load_image(path), box=Box(cx, cy, w, h))
        qs, flags = image_query_set(model, [patch], name=f"image:{path}")
        entries.extend(qs.entries)
    if not entries:
        raise UsageError("provide --text and/or --image-query")
    dets = model.detect(image, QuerySet(entries), threshold=args.threshold,
                        top_k=args.top_k)
    print(json.dumps({"detections": _detections_json(dets)}, indent=2))
    return 0


def cmd_extract_query(args) -> int:
    from ovdet.boxes import Box
    from ovdet.queries import QueryPatch, extract_image_query

    model, _ = _load_model(args.checkpoint)
    cx, cy, w, h = (float(x) for x in args.box.split(","))
    emb, fallback = extract_image_query(
        model, QueryPatch(image=_load_image(args.image), box=Box(cx, cy, w, h)))
    print(json.dumps({"embedding": emb.tolist(), "fallback": fallback}))
    return 0


def cmd_ablate(args) -> int:
    from ovdet.checkpoint import load_checkpoint, save_checkpoint
    from ovdet.tokenizer import Vocabulary
    from ovdet.training import MetricsLog, TrainConfig, ablation_matrix, finetune

    base = TrainConfig.load(args.config)
    rows = sorted(int(r) for r in args.rows.split(","))
    matrix = {row: (desc, cfg) for row, desc, cfg in ablation_matrix(base)}
    for row in rows:
        if row not in matrix:
            raise UsageError(f"unknown ablation row {row}; valid rows are 1-15")
    if args.dry_run:
        for row in rows:
            desc, cfg = matrix[row]
            print(f"row {row}: {desc}\n{cfg.to_json()}")
        return 0
    train, _ = _load_split(args.data, "train.json")
    vocab = Vocabulary.load(Path(args.data) / "vocab.txt")
    pretrained = None
    pretrain_cfg = None
    if args.pretrained:
        pretrained, pre_model_cfg, _ = load_checkpoint(args.pretrained, vocab)
        pretrain_cfg = pre_model_cfg.encoder
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for row in rows:
        desc, cfg = matrix[row]
        print(f"== ablation row {row}: {desc}")
        log = MetricsLog(out / f"row{row:02d}.metrics.jsonl")
        enc = pretrain_cfg or EncoderConfig(image_size=cfg.image_size, patch_size=8,
                                            depth=2, width=64, n_heads=4,
                                            mlp_dim=128, text_vocab=len(vocab))
        model, _ = finetune(cfg, [train], vocab, enc, pretrained=pretrained,
                            pretrain_cfg=pretrain_cfg, log=log)
        save_checkpoint(model.params, model.cfg, vocab, out / f"row{row:02d}.ckpt",
                        stage="finetune")
        vocab.save(out / f"row{row:02d}.vocab")
    return 0


def cmd_serve(args) -> int:
    from ovdet.server import serve

    model, _ = _load_model(args.checkpoint)
    serve(model, host=args.host, port=args.port, workers=args.workers or None)
    return 0


_COMMANDS = {
    "synth-data": cmd_synth_data,
    "pretrain": cmd_pretrain,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "detect": cmd_detect,
    "extract-query": cmd_extract_query,
    "ablate": cmd_ablate,
    "serve": cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
