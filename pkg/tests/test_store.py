import json

import numpy as np
import pytest

from vleer import store
from vleer.errors import FormatError, ValidationError


def random_bundle(rng, slide_id="s", n=None, d=None, label=None):
    n = n or int(rng.integers(1, 20))
    d = d or int(rng.integers(1, 16))
    cols = int(np.ceil(np.sqrt(n)))
    coords = [(i // cols, i % cols) for i in range(n)]
    emb = rng.standard_normal((n, d)).astype(np.float32)
    return store.EmbeddingBundle(slide_id, coords, emb, label=label)


def test_minimal_bundle_roundtrip(tmp_path):
    b = store.EmbeddingBundle("tiny", [(0, 0)], np.array([[1.0, 0.0]]))
    path = tmp_path / "tiny.vleb"
    store.write_bundle(b, path)
    got = store.read_bundle(path)
    assert got.slide_id == "tiny"
    assert got.patch_coords == [(0, 0)]
    np.testing.assert_array_equal(got.embeddings, b.embeddings)
    assert got.label is None


def test_bad_magic(tmp_path):
    path = tmp_path / "x.vleb"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        store.read_bundle(path)


def test_version_mismatch(tmp_path):
    b = store.EmbeddingBundle("v", [(0, 0)], np.array([[1.0]]))
    path = tmp_path / "v.vleb"
    store.write_bundle(b, path)
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="version"):
        store.read_bundle(path)


def test_truncated_payload(tmp_path):
    # header claims 3 rows, payload holds 2
    b = store.EmbeddingBundle("t", [(0, 0), (0, 1), (0, 2)],
                              np.ones((3, 2), dtype=np.float32))
    path = tmp_path / "t.vleb"
    store.write_bundle(b, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 8])
    with pytest.raises(FormatError, match="truncated"):
        store.read_bundle(path)


def test_nan_row_rejected():
    emb = np.ones((2, 2), dtype=np.float32)
    emb[1, 0] = np.nan
    with pytest.raises(ValidationError, match="row 1"):
        store.EmbeddingBundle("n", [(0, 0), (0, 1)], emb)


def test_duplicate_coords_rejected():
    with pytest.raises(ValidationError, match="duplicate"):
        store.EmbeddingBundle("d", [(0, 0), (0, 0)], np.ones((2, 2), dtype=np.float32))


def test_roundtrip_100_random_bundles(tmp_path):
    rng = np.random.default_rng(42)
    for i in range(100):
        label = int(rng.integers(0, 3)) if rng.random() < 0.5 else None
        b = random_bundle(rng, slide_id=f"b{i}", label=label)
        path = tmp_path / f"b{i}.vleb"
        store.write_bundle(b, path)
        first = path.read_bytes()
        got = store.read_bundle(path)
        assert got.patch_coords == b.patch_coords
        assert got.label == b.label
        # floats bit-equal
        assert got.embeddings.tobytes() == b.embeddings.tobytes()
        store.write_bundle(got, path)
        assert path.read_bytes() == first


def test_large_bundle_payload_size(tmp_path):
    n, d = 10_000, 512
    cols = 100
    coords = [(i // cols, i % cols) for i in range(n)]
    b = store.EmbeddingBundle("big", coords, np.zeros((n, d), dtype=np.float32))
    path = tmp_path / "big.vleb"
    store.write_bundle(b, path)
    header = 4 + 2 + 4 + 4 + n * 8
    assert path.stat().st_size == header + n * d * 4
    got = store.read_bundle(path)
    assert got.n_patches == n and got.dim == d


# --- keyword pool ----------------------------------------------------------

def _pool_doc(classes, templates=("an image of {}.",)):
    return {
        "task": "demo",
        "classes": [{"name": n, "keywords": kws} for n, kws in classes],
        "templates": list(templates),
    }


def test_nsclc_keyword_counts(tmp_path):
    classes = [
        ("LUAD", [f"luad keyword {i}" for i in range(23)]),
        ("LUSC", [f"lusc keyword {i}" for i in range(13)]),
        ("normal", [f"normal keyword {i}" for i in range(20)]),
    ]
    path = tmp_path / "pool.json"
    path.write_text(json.dumps(_pool_doc(classes)))
    pool = store.load_keyword_pool(path)
    assert pool.n_keywords == 56


def test_single_keyword_pool(tmp_path):
    path = tmp_path / "pool.json"
    path.write_text(json.dumps(_pool_doc([("a", ["papillae"])], templates=["{}"])))
    pool = store.load_keyword_pool(path)
    assert pool.n_keywords == 1


def test_casefold_duplicate_rejected(tmp_path):
    path = tmp_path / "pool.json"
    path.write_text(json.dumps(_pool_doc([("a", ["Papillae", "papillae "])])))
    with pytest.raises(ValidationError, match="duplicate"):
        store.load_keyword_pool(path)


def test_template_without_placeholder_rejected():
    with pytest.raises(ValidationError, match="placeholder"):
        store.KeywordPool("t", [("a", ["x"])], ["no slot here"])


def test_empty_pool_rejected():
    with pytest.raises(ValidationError, match="empty"):
        store.KeywordPool("t", [("a", [])], ["{}"])


def test_pool_roundtrip(tmp_path):
    pool = store.KeywordPool("t", [("a", ["x", "y"]), ("b", ["z"])], ["see {}", "{} here"])
    path = tmp_path / "pool.json"
    store.save_keyword_pool(pool, path)
    got = store.load_keyword_pool(path)
    assert got == pool


# --- text table ------------------------------------------------------------

def test_text_table_requires_unit_norm():
    with pytest.raises(ValidationError, match="unit-norm"):
        store.TextEmbeddingTable(["a"], np.array([[1.0, 1.0]]))


def test_text_table_roundtrip(tmp_path):
    rows = np.array([[1.0, 0.0], [0.6, 0.8]])
    table = store.TextEmbeddingTable(["a", "b"], rows)
    path = tmp_path / "t.json"
    store.save_text_table(table, path)
    got = store.load_text_table(path)
    assert got.keywords == ["a", "b"]
    np.testing.assert_array_equal(got.embeddings, rows)


# --- synthetic cohort ------------------------------------------------------

def test_synthetic_determinism():
    spec = store.SyntheticSpec(n_slides=6, patches_min=4, patches_max=12)
    a = store.generate_synthetic_cohort(spec, seed=7)
    b = store.generate_synthetic_cohort(spec, seed=7)
    assert len(a.bundles) == len(b.bundles)
    for x, y in zip(a.bundles, b.bundles):
        assert x.embeddings.tobytes() == y.embeddings.tobytes()
        assert x.patch_coords == y.patch_coords
        assert x.label == y.label
    assert a.text_table.embeddings.tobytes() == b.text_table.embeddings.tobytes()
    assert a.pool == b.pool


def test_synthetic_different_seeds_differ():
    spec = store.SyntheticSpec(n_slides=2, patches_min=4, patches_max=4)
    a = store.generate_synthetic_cohort(spec, seed=1)
    b = store.generate_synthetic_cohort(spec, seed=2)
    assert a.bundles[0].embeddings.tobytes() != b.bundles[0].embeddings.tobytes()


def test_synthetic_rejects_bad_spec():
    with pytest.raises(ValidationError):
        store.SyntheticSpec(n_slides=0).validate()
    with pytest.raises(ValidationError):
        store.SyntheticSpec(d_v=8, d_t=16).validate()
    with pytest.raises(ValidationError):
        store.SyntheticSpec(patches_min=10, patches_max=5).validate()


def test_synthetic_labels_cover_classes():
    spec = store.SyntheticSpec(n_slides=9, n_classes=3, patches_min=4, patches_max=8)
    cohort = store.generate_synthetic_cohort(spec, seed=0)
    assert sorted({b.label for b in cohort.bundles}) == [0, 1, 2]


def test_save_cohort_layout(tmp_path):
    spec = store.SyntheticSpec(n_slides=3, patches_min=4, patches_max=6)
    cohort = store.generate_synthetic_cohort(spec, seed=3)
    store.save_cohort(cohort, tmp_path)
    assert len(list((tmp_path / "bundles").glob("*.vleb"))) == 3
    assert (tmp_path / "pool.json").exists()
    assert (tmp_path / "text_emb.json").exists()
    enc = json.loads((tmp_path / "encoder.json").read_text())
    assert enc["type"] == "keyword-lookup"


# --- fused bundle ----------------------------------------------------------

def test_fused_width_and_block_invariants(tmp_path):
    rng = np.random.default_rng(0)
    fused = np.zeros((3, 4), dtype=np.float32)
    vis = rng.standard_normal((3, 2)).astype(np.float32)
    text = rng.standard_normal((2, 2)).astype(np.float32)
    assigns = np.array([0, 1, 0])
    fused[:, :2] = vis
    fused[:, 2:] = text[assigns]
    fb = store.FusedBundle("f", [(0, 0), (0, 1), (1, 0)], fused, 2, 2, text, assigns, label=1)
    path = tmp_path / "f.vleb"
    store.write_fused(fb, path)
    got = store.read_fused(path)
    assert got.fused.tobytes() == fused.tobytes()
    assert got.d_v == 2 and got.d_t == 2
    assert got.label == 1


def test_fused_block_mismatch_rejected():
    fused = np.ones((1, 4), dtype=np.float32)
    text = np.zeros((1, 2), dtype=np.float32)
    with pytest.raises(ValidationError, match="text block"):
        store.FusedBundle("f", [(0, 0)], fused, 2, 2, text, np.array([0]))
