"""Explainability artifacts: RoIs, ReVL annotations, attention heatmaps.

Regions of interest are connected components (4-connectivity by default)
of the cluster-labeled patch grid. Each RoI carries its cluster's
representative keywords and the mean of its member patches' normalized
attention. Heatmaps are rendered one pixel block per patch with a fixed
blue-to-green-to-red colormap; cells absent from the grid are transparent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from matplotlib import image as mpimage

from .errors import FormatError, ValidationError

_NEIGHBORS_4 = ((-1, 0), (1, 0), (0, -1), (0, 1))
_NEIGHBORS_8 = _NEIGHBORS_4 + ((-1, -1), (-1, 1), (1, -1), (1, 1))


@dataclass
class RoI:
    roi_id: int
    cluster_id: int
    patches: list[tuple[int, int]]
    bbox: tuple[int, int, int, int]  # (row_min, col_min, row_max, col_max)
    keywords: list[str] = field(default_factory=list)
    mean_attention: float = 0.0


@dataclass
class ReVLAnnotation:
    slide_id: str
    rois: list[RoI]
    predicted_class: int
    probability: float
    provenance: dict = field(default_factory=dict)


def merge_rois(coords, assignments, connectivity: int = 4) -> list[RoI]:
    """Connected components of same-cluster patches on the grid."""
    coords = [(int(r), int(c)) for r, c in coords]
    assignments = np.asarray(assignments, dtype=np.int64)
    if len(coords) != assignments.shape[0]:
        raise ValidationError("coords and assignments must be aligned")
    if connectivity not in (4, 8):
        raise ValidationError("connectivity must be 4 or 8")
    neighbors = _NEIGHBORS_4 if connectivity == 4 else _NEIGHBORS_8

    by_coord = {coord: i for i, coord in enumerate(coords)}
    visited = set()
    rois = []
    for start in coords:  # input order makes roi ids deterministic
        if start in visited:
            continue
        cluster = int(assignments[by_coord[start]])
        stack = [start]
        visited.add(start)
        members = []
        while stack:
            r, c = stack.pop()
            members.append((r, c))
            for dr, dc in neighbors:
                nb = (r + dr, c + dc)
                if nb in visited or nb not in by_coord:
                    continue
                if int(assignments[by_coord[nb]]) != cluster:
                    continue
                visited.add(nb)
                stack.append(nb)
        members.sort()
        rows = [r for r, _ in members]
        cols = [c for _, c in members]
        rois.append(
            RoI(
                roi_id=len(rois),
                cluster_id=cluster,
                patches=members,
                bbox=(min(rows), min(cols), max(rows), max(cols)),
            )
        )
    return rois


def normalize_attention(attention) -> np.ndarray:
    """Min-max normalize to [0, 1]; a constant vector maps to all 0.5."""
    a = np.asarray(attention, dtype=np.float64)
    if a.ndim != 1 or a.shape[0] < 1:
        raise ValidationError("attention must be a non-empty vector")
    lo, hi = float(a.min()), float(a.max())
    if hi == lo:
        return np.full_like(a, 0.5)
    return (a - lo) / (hi - lo)


def attach_attention(rois: list[RoI], coords, normalized_attention) -> None:
    """Fill each RoI's mean_attention from its member patches."""
    att = {tuple(c): float(v) for c, v in zip(coords, normalized_attention)}
    for roi in rois:
        roi.mean_attention = float(np.mean([att[p] for p in roi.patches]))


def heatmap_colormap() -> np.ndarray:
    """256-entry RGB table: blue (low) through green to red (high)."""
    table = np.zeros((256, 3), dtype=np.uint8)
    for i in range(256):
        t = i / 255.0
        if t <= 0.5:
            frac = t / 0.5
            table[i] = (0, round(255 * frac), round(255 * (1 - frac)))
        else:
            frac = (t - 0.5) / 0.5
            table[i] = (round(255 * frac), round(255 * (1 - frac)), 0)
    return table


_COLORMAP = heatmap_colormap()


def heatmap_pixels(coords, normalized_attention, upscale: int = 1) -> np.ndarray:
    """RGBA raster with one ``upscale``-sized block per patch."""
    att = np.asarray(normalized_attention, dtype=np.float64)
    if np.any(att < 0) or np.any(att > 1):
        raise ValidationError("attention must be normalized to [0, 1]")
    coords = [(int(r), int(c)) for r, c in coords]
    n_rows = max(r for r, _ in coords) + 1
    n_cols = max(c for _, c in coords) + 1
    img = np.zeros((n_rows, n_cols, 4), dtype=np.uint8)
    for (r, c), a in zip(coords, att):
        idx = int(round(a * 255))
        img[r, c, :3] = _COLORMAP[idx]
        img[r, c, 3] = 255
    if upscale > 1:
        img = np.repeat(np.repeat(img, upscale, axis=0), upscale, axis=1)
    return img


def render_heatmap(coords, normalized_attention, out_path, upscale: int = 16) -> None:
    """Write the attention raster as a PNG; deterministic for fixed inputs."""
    img = heatmap_pixels(coords, normalized_attention, upscale=upscale)
    mpimage.imsave(Path(out_path), img, format="png")


def emit_annotation(annotation: ReVLAnnotation, out_path) -> None:
    slide_patches = sorted(p for roi in annotation.rois for p in roi.patches)
    if len(set(slide_patches)) != len(slide_patches):
        raise ValidationError("RoIs overlap: a patch appears in two regions")
    doc = {
        "slide_id": annotation.slide_id,
        "prediction": {
            "class": int(annotation.predicted_class),
            "probability": float(annotation.probability),
        },
        "rois": [
            {
                "roi_id": roi.roi_id,
                "cluster_id": roi.cluster_id,
                "patches": [[r, c] for r, c in roi.patches],
                "bbox": list(roi.bbox),
                "keywords": roi.keywords,
                "mean_attention": roi.mean_attention,
            }
            for roi in annotation.rois
        ],
        "provenance": annotation.provenance,
    }
    Path(out_path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_annotation(path) -> ReVLAnnotation:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        rois = [
            RoI(
                roi_id=int(r["roi_id"]),
                cluster_id=int(r["cluster_id"]),
                patches=[(int(a), int(b)) for a, b in r["patches"]],
                bbox=tuple(int(x) for x in r["bbox"]),
                keywords=list(r["keywords"]),
                mean_attention=float(r["mean_attention"]),
            )
            for r in doc["rois"]
        ]
        return ReVLAnnotation(
            slide_id=doc["slide_id"],
            rois=rois,
            predicted_class=int(doc["prediction"]["class"]),
            probability=float(doc["prediction"]["probability"]),
            provenance=doc.get("provenance", {}),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid annotation file: {exc}") from exc
