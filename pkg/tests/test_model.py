"""Model facade: construction paths, transfer wiring, detect contract."""

import numpy as np
import pytest

from ovdet.configs import EncoderConfig, ModelConfig
from ovdet.encoders import init_pretrain_params
from ovdet.errors import ConfigError
from ovdet.model import DetectionModel
from ovdet.tokenizer import build_vocab_for

CATEGORIES = ["red circle", "blue square"]


def tiny_model(seed=0, grid=4, width=16):
    vocab = build_vocab_for(CATEGORIES)
    enc = EncoderConfig(image_size=8 * grid, patch_size=8, depth=1, width=width,
                        n_heads=2, mlp_dim=32, text_vocab=len(vocab))
    return DetectionModel.from_scratch(ModelConfig(encoder=enc), vocab, seed=seed)


def test_from_pretrained_drops_pretrain_heads_and_interpolates():
    vocab = build_vocab_for(CATEGORIES)
    pre_enc = EncoderConfig(image_size=16, patch_size=8, depth=1, width=16,
                            n_heads=2, mlp_dim=32, text_vocab=len(vocab))
    store = init_pretrain_params(pre_enc, seed=1)
    det_enc = EncoderConfig(image_size=24, patch_size=8, depth=1, width=16,
                            n_heads=2, mlp_dim=32, text_vocab=len(vocab))
    model = DetectionModel.from_pretrained(store, pre_enc,
                                           ModelConfig(encoder=det_enc), vocab)
    names = model.params.names()
    assert not any(n.startswith("map.") or n.startswith("temp.") for n in names)
    assert any(n.startswith("head.") for n in names)
    assert model.params["img.pos"].data.shape == (9, 16)  # 2x2 -> 3x3 grid
    # encoder weights transferred verbatim
    assert np.array_equal(model.params["img.patch.w"].data,
                          store["img.patch.w"].data)


def test_detect_pure_function():
    model = tiny_model()
    rng = np.random.default_rng(0)
    image = rng.uniform(size=(32, 32, 3))
    queries = rng.normal(size=(3, 16))
    a = model.detect(image, queries, threshold=0.0, top_k=10)
    b = model.detect(image, queries, threshold=0.0, top_k=10)
    assert [(d.box, d.score, d.query_index) for d in a] == \
        [(d.box, d.score, d.query_index) for d in b]


def test_detect_threshold_above_one_empty():
    model = tiny_model()
    image = np.random.default_rng(1).uniform(size=(32, 32, 3))
    queries = np.random.default_rng(2).normal(size=(2, 16))
    assert model.detect(image, queries, threshold=1.0 + 1e-9) == []


def test_detect_top_k_one_is_global_max():
    model = tiny_model()
    rng = np.random.default_rng(3)
    image = rng.uniform(size=(32, 32, 3))
    queries = rng.normal(size=(4, 16))
    top = model.detect(image, queries, threshold=0.0, top_k=1)
    allo = model.detect(image, queries, threshold=0.0, top_k=10_000)
    assert len(top) == 1
    assert top[0].score == max(d.score for d in allo)


def test_detect_scores_descending_boxes_in_range():
    model = tiny_model()
    rng = np.random.default_rng(4)
    image = rng.uniform(size=(32, 32, 3))
    queries = rng.normal(size=(5, 16))
    dets = model.detect(image, queries, threshold=0.0, top_k=50)
    scores = [d.score for d in dets]
    assert scores == sorted(scores, reverse=True)
    for d in dets:
        # sigmoid decoding bounds center and size (corners may overhang)
        assert 0.0 <= d.box.cx <= 1.0 and 0.0 <= d.box.cy <= 1.0
        assert 0.0 < d.box.w <= 1.0 and 0.0 < d.box.h <= 1.0


def test_detect_many_queries_one_pass():
    # thousands of queries in a single call: scoring is linear in Q
    model = tiny_model()
    rng = np.random.default_rng(5)
    image = rng.uniform(size=(32, 32, 3))
    queries = rng.normal(size=(1203, 16))
    dets = model.detect(image, queries, threshold=0.0, top_k=5)
    assert len(dets) == 5
    assert all(0 <= d.query_index < 1203 for d in dets)


def test_detect_rejects_empty_queries():
    model = tiny_model()
    image = np.zeros((32, 32, 3))
    with pytest.raises(ConfigError):
        model.detect(image, np.zeros((0, 16)))


def test_vocab_size_mismatch_rejected_on_transfer():
    vocab = build_vocab_for(CATEGORIES)
    pre_enc = EncoderConfig(image_size=16, patch_size=8, depth=1, width=16,
                            n_heads=2, mlp_dim=32, text_vocab=len(vocab))
    store = init_pretrain_params(pre_enc, seed=1)
    other_enc = EncoderConfig(image_size=16, patch_size=8, depth=1, width=16,
                              n_heads=2, mlp_dim=32, text_vocab=len(vocab) + 5)
    with pytest.raises(ConfigError):
        DetectionModel.from_pretrained(store, pre_enc,
                                       ModelConfig(encoder=other_enc), vocab)
