"""Query engine: text ensembles, dissimilarity selection, few-shot pooling."""

import numpy as np
import pytest

from ovdet.boxes import Box
from ovdet.configs import EncoderConfig, ModelConfig
from ovdet.errors import ConfigError
from ovdet.model import DetectionModel
from ovdet.queries import (
    QueryEntry,
    QueryPatch,
    QuerySet,
    dissimilarity_scores,
    embed_text_queries,
    extract_image_query,
    fewshot_average,
    image_query_set,
)
from ovdet.tokenizer import build_vocab_for

CATEGORIES = ["red circle", "blue square", "green triangle"]


def tiny_model(seed=0):
    vocab = build_vocab_for(CATEGORIES)
    enc = EncoderConfig(image_size=32, patch_size=8, depth=1, width=16,
                        n_heads=2, mlp_dim=32, text_vocab=len(vocab))
    return DetectionModel.from_scratch(ModelConfig(encoder=enc), vocab, seed=seed)


# ------------------------------------------------------------- text queries


def test_eval_mode_seven_embeddings_per_category():
    model = tiny_model()
    qs = embed_text_queries(model, ["red circle", "blue square"], mode="eval")
    assert len(qs.entries) == 2
    for e in qs.entries:
        assert e.embeddings.shape[0] == 7
        assert e.origin == "text"


def test_train_mode_single_prompted_embedding():
    model = tiny_model()
    qs = embed_text_queries(model, CATEGORIES, mode="train",
                            rng=np.random.default_rng(0))
    assert all(e.embeddings.shape[0] == 1 for e in qs.entries)


def test_empty_categories_rejected():
    model = tiny_model()
    with pytest.raises(ConfigError):
        embed_text_queries(model, [], mode="eval")


def test_ensembled_probability_is_mean_and_idempotent():
    model = tiny_model()
    rng = np.random.default_rng(1)
    image = rng.uniform(size=(32, 32, 3))
    e1 = rng.normal(size=(1, 16))
    e2 = rng.normal(size=(1, 16))
    single = model.detect(image, QuerySet([QueryEntry("a", e1)]), top_k=1)[0]
    pair = model.detect(image, QuerySet([QueryEntry("a", np.vstack([e1, e2]))]),
                        top_k=1)[0]
    other = model.detect(image, QuerySet([QueryEntry("a", e2)]), top_k=1)[0]
    # mean of per-prompt probabilities at the winning token
    boxes, p1, _ = model.probabilities(image, e1)
    boxes, p2, _ = model.probabilities(image, e2)
    mean_prob = ((p1 + p2) / 2)[0].max()
    assert pair.score == pytest.approx(mean_prob, abs=1e-12)
    # duplicating a template changes nothing
    dup = model.detect(image, QuerySet([QueryEntry("a", np.vstack([e1, e1]))]),
                       top_k=1)[0]
    assert dup.score == pytest.approx(single.score, abs=1e-12)


def test_text_and_image_queries_share_scoring_path():
    model = tiny_model()
    rng = np.random.default_rng(2)
    image = rng.uniform(size=(32, 32, 3))
    vec = rng.normal(size=(1, 16))
    as_text = QuerySet([QueryEntry("q", vec.copy(), origin="text")])
    as_image = QuerySet([QueryEntry("q", vec.copy(), origin="image")])
    d1 = model.detect(image, as_text, top_k=5)
    d2 = model.detect(image, as_image, top_k=5)
    assert [(d.box, d.score) for d in d1] == [(d.box, d.score) for d in d2]


# ------------------------------------------------------ dissimilarity scores


def test_dissimilarity_hand_case():
    z = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    assert dissimilarity_scores(z).tolist() == [2.0, 2.0, 1.0]


def test_dissimilarity_single_is_squared_norm():
    z = np.array([[3.0, 4.0]])
    assert dissimilarity_scores(z)[0] == pytest.approx(25.0)


def test_dissimilarity_zeros():
    assert np.array_equal(dissimilarity_scores(np.zeros((4, 3))), np.zeros(4))


def test_dissimilarity_permutation_covariant():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(6, 5))
    perm = rng.permutation(6)
    assert np.allclose(dissimilarity_scores(z)[perm],
                       dissimilarity_scores(z[perm]), atol=1e-12)


# ------------------------------------------------------- image-query extract


def test_extract_picks_most_dissimilar_and_matches_bruteforce():
    model = tiny_model()
    rng = np.random.default_rng(4)
    image = rng.uniform(size=(32, 32, 3))
    # query box matching one grid cell: candidates exist (prior boxes tile)
    patch = QueryPatch(image=image, box=Box(0.375, 0.375, 0.25, 0.25))
    emb, fallback = extract_image_query(model, patch)
    assert not fallback
    # brute-force oracle over the candidate set
    from ovdet.boxes import cxcywh_to_xyxy, iou_matrix
    boxes, embs = model.token_predictions(image)
    boxes, embs = boxes[0], embs[0]
    ious = iou_matrix(np.array([patch.box.to_xyxy()]), cxcywh_to_xyxy(boxes))[0]
    cands = [i for i in range(len(boxes)) if ious[i] > 0.65]
    scores = [sum(float(embs[i] @ embs[j]) for j in cands) for i in cands]
    best = cands[int(np.argmin(scores))]
    assert np.array_equal(emb, embs[best])


def test_extract_fallback_on_no_overlap():
    model = tiny_model()
    rng = np.random.default_rng(5)
    image = rng.uniform(size=(32, 32, 3))
    patch = QueryPatch(image=image, box=Box(0.5, 0.5, 0.02, 0.02))
    emb, fallback = extract_image_query(model, patch)
    assert fallback
    expected = model.encode_texts(["an image of an object"]).data[0]
    assert np.allclose(emb, expected, atol=1e-12)


def test_extract_deterministic():
    model = tiny_model()
    image = np.random.default_rng(6).uniform(size=(32, 32, 3))
    patch = QueryPatch(image=image, box=Box(0.375, 0.375, 0.25, 0.25))
    a, fa = extract_image_query(model, patch)
    b, fb = extract_image_query(model, patch)
    assert fa == fb and np.array_equal(a, b)


# ------------------------------------------------------------------ few-shot


def test_fewshot_single_normalizes():
    out = fewshot_average([np.array([0.0, 2.0])])
    assert np.allclose(out, [0.0, 1.0])


def test_fewshot_opposite_vectors_error():
    with pytest.raises(ValueError):
        fewshot_average([np.array([1.0, 0.0]), np.array([-1.0, 0.0])])


def test_fewshot_mean_of_orthogonal():
    out = fewshot_average([np.array([1.0, 0.0]), np.array([0.0, 1.0])])
    assert np.allclose(out, [1 / np.sqrt(2), 1 / np.sqrt(2)])


def test_fewshot_empty_rejected():
    with pytest.raises(ConfigError):
        fewshot_average(np.zeros((0, 4)))


def test_image_query_set_k_shot():
    model = tiny_model()
    rng = np.random.default_rng(7)
    image = rng.uniform(size=(32, 32, 3))
    patches = [QueryPatch(image=image, box=Box(0.375, 0.375, 0.25, 0.25)),
               QueryPatch(image=image, box=Box(0.625, 0.625, 0.25, 0.25))]
    qs, flags = image_query_set(model, patches, name="thing")
    assert len(qs.entries) == 1 and len(flags) == 2
    assert np.linalg.norm(qs.entries[0].embeddings) == pytest.approx(1.0)


def test_query_set_rejects_empty_and_nonfinite():
    with pytest.raises(ConfigError):
        QuerySet([])
    with pytest.raises(ConfigError):
        QuerySet([QueryEntry("x", np.array([[np.nan, 1.0]]))])
