import numpy as np
import pytest
from PIL import Image

from vleer import explain
from vleer.errors import ValidationError

from .oracles import bfs_components, is_4_connected


def test_full_rectangle_single_cluster_one_roi():
    coords = [(r, c) for r in range(3) for c in range(4)]
    rois = explain.merge_rois(coords, [0] * 12)
    assert len(rois) == 1
    assert rois[0].bbox == (0, 0, 2, 3)
    assert sorted(rois[0].patches) == sorted(coords)


def test_checkerboard_diagonals_not_adjacent():
    coords = [(0, 0), (0, 1), (1, 0), (1, 1)]
    labels = [0, 1, 1, 0]
    rois = explain.merge_rois(coords, labels)
    assert len(rois) == 4
    # 8-connectivity merges the diagonals
    rois8 = explain.merge_rois(coords, labels, connectivity=8)
    assert len(rois8) == 2


def test_single_patch_single_roi():
    rois = explain.merge_rois([(5, 7)], [2])
    assert len(rois) == 1
    assert rois[0].cluster_id == 2
    assert rois[0].bbox == (5, 7, 5, 7)


def test_rois_match_bfs_oracle_random_grids():
    rng = np.random.default_rng(0)
    for _ in range(50):
        h, w = int(rng.integers(1, 7)), int(rng.integers(1, 7))
        all_coords = [(r, c) for r in range(h) for c in range(w)]
        keep = rng.random(len(all_coords)) < 0.8
        coords = [c for c, k in zip(all_coords, keep) if k] or [(0, 0)]
        labels = rng.integers(0, 3, size=len(coords))
        rois = explain.merge_rois(coords, labels)
        got = {frozenset(r.patches) for r in rois}
        want = set(bfs_components(coords, labels))
        assert got == want
        # partition: disjoint and covering
        union = [p for r in rois for p in r.patches]
        assert sorted(union) == sorted(coords)
        for r in rois:
            assert is_4_connected(r.patches)


def test_normalize_attention_hand_case():
    got = explain.normalize_attention([0.1, 0.2, 0.7])
    np.testing.assert_allclose(got, [0.0, 1 / 6, 1.0])


def test_normalize_attention_constant():
    np.testing.assert_array_equal(explain.normalize_attention([0.3] * 4), [0.5] * 4)


def test_normalize_attention_spanning_unchanged():
    np.testing.assert_allclose(explain.normalize_attention([0.0, 0.25, 1.0]),
                               [0.0, 0.25, 1.0])


def test_normalize_attention_monotone():
    rng = np.random.default_rng(1)
    a = rng.standard_normal(20)
    out = explain.normalize_attention(a)
    assert np.all((out >= 0) & (out <= 1))
    order = np.argsort(a)
    assert np.all(np.diff(out[order]) >= 0)


def test_colormap_endpoints():
    table = explain.heatmap_colormap()
    np.testing.assert_array_equal(table[0], [0, 0, 255])     # blue = low
    np.testing.assert_array_equal(table[255], [255, 0, 0])   # red = high
    assert table[128][1] > 200  # green midpoint


def test_render_single_red_cell(tmp_path):
    out = tmp_path / "one.png"
    explain.render_heatmap([(0, 0)], [1.0], out, upscale=1)
    img = np.asarray(Image.open(out).convert("RGBA"))
    assert img.shape == (1, 1, 4)
    np.testing.assert_array_equal(img[0, 0], [255, 0, 0, 255])


def test_render_exact_cell_colors_roundtrip(tmp_path):
    coords = [(0, 0), (0, 1), (1, 1)]
    att = np.array([0.0, 0.5, 1.0])
    out = tmp_path / "map.png"
    explain.render_heatmap(coords, att, out, upscale=4)
    img = np.asarray(Image.open(out).convert("RGBA"))
    assert img.shape == (8, 8, 4)
    table = explain.heatmap_colormap()
    for (r, c), a in zip(coords, att):
        block = img[r * 4 : (r + 1) * 4, c * 4 : (c + 1) * 4]
        expected = np.append(table[int(round(a * 255))], 255)
        assert np.all(block == expected)
    # missing cell (1, 0) is fully transparent
    assert np.all(img[4:8, 0:4, 3] == 0)


def test_render_deterministic(tmp_path):
    coords = [(r, c) for r in range(4) for c in range(4)]
    att = explain.normalize_attention(np.random.default_rng(2).random(16))
    a, b = tmp_path / "a.png", tmp_path / "b.png"
    explain.render_heatmap(coords, att, a)
    explain.render_heatmap(coords, att, b)
    assert a.read_bytes() == b.read_bytes()


def test_attach_attention_means():
    coords = [(0, 0), (0, 1), (1, 0)]
    rois = explain.merge_rois(coords, [0, 0, 1])
    explain.attach_attention(rois, coords, [0.2, 0.4, 1.0])
    by_cluster = {r.cluster_id: r for r in rois}
    assert by_cluster[0].mean_attention == pytest.approx(0.3)
    assert by_cluster[1].mean_attention == pytest.approx(1.0)


def test_annotation_roundtrip(tmp_path):
    coords = [(0, 0), (0, 1), (1, 0), (1, 1)]
    rois = explain.merge_rois(coords, [0, 0, 1, 1])
    for roi in rois:
        roi.keywords = ["hobnailing pattern", "tubules"]
    explain.attach_attention(rois, coords, [0.1, 0.3, 0.8, 1.0])
    annotation = explain.ReVLAnnotation(
        slide_id="rcc_sample",
        rois=rois,
        predicted_class=1,
        probability=0.92,
        provenance={"note": "fixture"},
    )
    path = tmp_path / "a.revl.json"
    explain.emit_annotation(annotation, path)
    got = explain.load_annotation(path)
    assert got == annotation
    assert "hobnailing pattern" in got.rois[0].keywords


def test_overlapping_rois_rejected(tmp_path):
    roi = explain.RoI(0, 0, [(0, 0)], (0, 0, 0, 0))
    dup = explain.RoI(1, 1, [(0, 0)], (0, 0, 0, 0))
    ann = explain.ReVLAnnotation("s", [roi, dup], 0, 1.0)
    with pytest.raises(ValidationError, match="overlap"):
        explain.emit_annotation(ann, tmp_path / "x.json")


def test_merge_rois_argument_errors():
    with pytest.raises(ValidationError):
        explain.merge_rois([(0, 0)], [0, 1])
    with pytest.raises(ValidationError):
        explain.merge_rois([(0, 0)], [0], connectivity=6)
