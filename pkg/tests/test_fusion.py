import numpy as np
import pytest

from vleer import alignment, clustering, fusion, store
from vleer.encoders import HashTextEncoder, KeywordLookupEncoder
from vleer.errors import ValidationError


def test_join_single():
    assert fusion.join_keywords(["papillae"]) == "papillae"


def test_join_two():
    got = fusion.join_keywords(["abundant mitosis", "cellular and nuclear atypia"])
    assert got == "abundant mitosis, cellular and nuclear atypia"


def test_join_is_order_sensitive():
    assert fusion.join_keywords(["a", "b"]) != fusion.join_keywords(["b", "a"])


def test_join_empty_rejected():
    with pytest.raises(ValidationError):
        fusion.join_keywords([])


def test_cluster_text_embedding_deterministic_and_unit():
    enc = HashTextEncoder(16)
    a = fusion.cluster_text_embedding("necrosis, papillae", enc)
    b = fusion.cluster_text_embedding("necrosis, papillae", enc)
    np.testing.assert_array_equal(a, b)
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-5)


def _make_model(assignments, centroids):
    return store.ClusterModel(
        k=centroids.shape[0],
        centroids=centroids,
        assignments=np.asarray(assignments),
        inertia=0.0,
    )


def test_fuse_definition():
    bundle = store.EmbeddingBundle("s", [(0, 0)], np.array([[1.0, 2.0]], dtype=np.float32))
    model = _make_model([0], np.array([[1.0, 2.0]]))
    fused = fusion.fuse(bundle, model, np.array([[3.0, 4.0]], dtype=np.float32))
    np.testing.assert_array_equal(fused.fused, [[1.0, 2.0, 3.0, 4.0]])
    assert fused.d_v == 2 and fused.d_t == 2


def test_fuse_single_cluster_shares_text_block():
    rng = np.random.default_rng(0)
    emb = rng.standard_normal((6, 3)).astype(np.float32)
    coords = [(0, i) for i in range(6)]
    bundle = store.EmbeddingBundle("s", coords, emb)
    model = _make_model([0] * 6, emb[:1].astype(np.float64))
    text = rng.standard_normal((1, 2)).astype(np.float32)
    fused = fusion.fuse(bundle, model, text)
    for row in fused.fused:
        np.testing.assert_array_equal(row[3:], text[0])
    # vision block untouched, bit-for-bit
    assert fused.fused[:, :3].tobytes() == emb.tobytes()


def test_fuse_shuffle_commutes():
    rng = np.random.default_rng(1)
    n = 10
    emb = rng.standard_normal((n, 4)).astype(np.float32)
    coords = [(i // 4, i % 4) for i in range(n)]
    assigns = rng.integers(0, 3, size=n)
    text = rng.standard_normal((3, 2)).astype(np.float32)
    centroids = rng.standard_normal((3, 4))

    bundle = store.EmbeddingBundle("s", coords, emb)
    fused = fusion.fuse(bundle, _make_model(assigns, centroids), text)

    perm = rng.permutation(n)
    shuffled = store.EmbeddingBundle("s", [coords[i] for i in perm], emb[perm])
    fused_shuffled = fusion.fuse(shuffled, _make_model(assigns[perm], centroids), text)
    np.testing.assert_array_equal(fused_shuffled.fused, fused.fused[perm])


def test_fuse_dimension_errors():
    bundle = store.EmbeddingBundle("s", [(0, 0)], np.ones((1, 2), dtype=np.float32))
    model = _make_model([0], np.ones((2, 2)))
    with pytest.raises(ValidationError):
        fusion.fuse(bundle, model, np.ones((1, 3), dtype=np.float32))  # missing row
    short = _make_model([0], np.ones((1, 2)))
    with pytest.raises(ValidationError):
        fusion.fuse(
            store.EmbeddingBundle("s", [(0, 0), (0, 1)], np.ones((2, 2), dtype=np.float32)),
            short,
            np.ones((1, 3), dtype=np.float32),
        )


def test_synthetic_cluster_text_tracks_centroid():
    """The comma-joined keyword embedding should sit closer to its own
    cluster's centroid than to other clusters' centroids."""
    hits = 0
    trials = 0
    for seed in range(25):
        spec = store.SyntheticSpec(
            n_slides=4,
            patches_min=40,
            patches_max=60,
            class_separation=3.0,
            text_signal=4.0,
        )
        cohort = store.generate_synthetic_cohort(spec, seed=seed)
        encoder = KeywordLookupEncoder(cohort.keyword_vectors)
        # mixed-class bag so the two clusters carry distinct semantics
        mixed = np.vstack([cohort.bundles[0].embeddings, cohort.bundles[1].embeddings])
        model = clustering.kmeans(mixed, 2, seed=0, restarts=3)
        ck = alignment.align_clusters(mixed, model, cohort.text_table, 3)
        text = fusion.cluster_text_matrix(ck, encoder)
        for c in range(model.k):
            cos = [
                alignment.similarity(text[c], model.centroids[other])
                for other in range(model.k)
            ]
            trials += 1
            if int(np.argmax(cos)) == c:
                hits += 1
    assert trials >= 50
    assert hits / trials >= 0.9
