"""Building vision-language embeddings by concatenation.

Each cluster's selected keywords are comma-joined, encoded once (no
template averaging), and the resulting unit vector is appended to every
member patch's visual embedding.
"""
from __future__ import annotations

import numpy as np

from .encoders import TextEncoder
from .errors import ValidationError, VleerError
from .store import ClusterKeywords, ClusterModel, EmbeddingBundle, FusedBundle


def join_keywords(selected: list[str]) -> str:
    """Comma-join keywords in selection order."""
    if not selected:
        raise ValidationError("cannot join an empty keyword list")
    return ", ".join(selected)


def cluster_text_embedding(joined: str, text_encoder: TextEncoder) -> np.ndarray:
    """Encode the joined keyword string into a unit-norm text vector."""
    try:
        vec = np.asarray(text_encoder.encode(joined), dtype=np.float64)
    except VleerError:
        raise
    except Exception as exc:
        raise VleerError(f"text encoder failed on {joined!r}: {exc}") from exc
    norm = np.linalg.norm(vec)
    if norm == 0 or not np.isfinite(norm):
        raise ValidationError(f"degenerate text embedding for {joined!r}")
    return vec / norm


def cluster_text_matrix(
    keywords: ClusterKeywords, text_encoder: TextEncoder
) -> np.ndarray:
    """Representative text embedding for every cluster, stacked (k, d_t)."""
    rows = [
        cluster_text_embedding(join_keywords([s.keyword for s in sel]), text_encoder)
        for sel in keywords.per_cluster
    ]
    return np.array(rows)


def fuse(
    bundle: EmbeddingBundle,
    clusters: ClusterModel,
    cluster_text: np.ndarray,
    provenance: dict | None = None,
) -> FusedBundle:
    """Concatenate each patch's visual embedding with its cluster text vector."""
    cluster_text = np.asarray(cluster_text, dtype=np.float32)
    if clusters.assignments.shape[0] != bundle.n_patches:
        raise ValidationError(
            f"cluster model covers {clusters.assignments.shape[0]} patches, "
            f"bundle has {bundle.n_patches}"
        )
    if cluster_text.ndim != 2 or cluster_text.shape[0] < clusters.k:
        raise ValidationError(
            f"need a text row for each of {clusters.k} clusters, got {cluster_text.shape}"
        )
    d_v = bundle.dim
    d_t = cluster_text.shape[1]
    fused = np.empty((bundle.n_patches, d_v + d_t), dtype=np.float32)
    fused[:, :d_v] = bundle.embeddings
    fused[:, d_v:] = cluster_text[clusters.assignments]
    return FusedBundle(
        slide_id=bundle.slide_id,
        patch_coords=bundle.patch_coords,
        fused=fused,
        d_v=d_v,
        d_t=d_t,
        cluster_text=cluster_text,
        assignments=clusters.assignments,
        label=bundle.label,
        provenance=provenance or {},
    )
