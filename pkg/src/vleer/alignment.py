"""Vision-text alignment and per-cluster keyword retrieval.

Keyword text embeddings are template-averaged and unit-normalized. For
each cluster, every member patch ranks all keywords by cosine similarity
(rank 1 = least similar, rank N_K = most similar), the ranks are summed
across the cluster's patches, and the keywords with the largest rank sums
become the cluster's representatives.

Tie rules, all chosen for determinism: equal similarities within a patch
rank by ascending keyword index; equal rank sums break by higher mean
similarity, then ascending keyword index.
"""
from __future__ import annotations

import numpy as np

from .encoders import TextEncoder
from .errors import ValidationError, VleerError
from .store import (
    ClusterKeywords,
    ClusterModel,
    KeywordPool,
    SelectedKeyword,
    TextEmbeddingTable,
)


def embed_keywords(pool: KeywordPool, text_encoder: TextEncoder) -> TextEmbeddingTable:
    """Embed every pool keyword as the normalized mean over template prompts."""
    rows = []
    for kw in pool.keywords:
        prompts = [template.format(kw) for template in pool.templates]
        try:
            vecs = [np.asarray(text_encoder.encode(p), dtype=np.float64) for p in prompts]
        except VleerError:
            raise
        except Exception as exc:
            raise VleerError(f"text encoder failed on keyword {kw!r}: {exc}") from exc
        mean = np.mean(vecs, axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0 or not np.isfinite(norm):
            raise ValidationError(f"degenerate embedding for keyword {kw!r}")
        rows.append(mean / norm)
    return TextEmbeddingTable(list(pool.keywords), np.array(rows))


def similarity(v, t) -> float:
    """Cosine similarity, clipped to [-1, 1]."""
    v = np.asarray(v, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if v.shape != t.shape:
        raise ValidationError(f"dimension mismatch: {v.shape} vs {t.shape}")
    nv, nt = np.linalg.norm(v), np.linalg.norm(t)
    if nv == 0 or nt == 0:
        raise ValidationError("cosine similarity undefined for zero vectors")
    return float(np.clip(np.dot(v, t) / (nv * nt), -1.0, 1.0))


class RankTable:
    """Per-patch keyword ranks and similarities for one cluster.

    ``ranks[i]`` is a permutation of 1..N_K where larger means more
    similar; ``similarities[i, j]`` is cosine(patch i, keyword j).
    """

    def __init__(
        self,
        cluster_id: int,
        ranks: np.ndarray,
        similarities: np.ndarray,
        keywords: list[str] | None = None,
    ):
        self.cluster_id = cluster_id
        self.ranks = np.asarray(ranks, dtype=np.int64)
        self.similarities = np.asarray(similarities, dtype=np.float64)
        self.keywords = list(keywords) if keywords is not None else [
            f"keyword_{j}" for j in range(self.ranks.shape[1])
        ]
        if self.ranks.shape != self.similarities.shape:
            raise ValidationError("ranks/similarities shape mismatch")
        n_k = self.ranks.shape[1]
        expected = np.arange(1, n_k + 1)
        for i, row in enumerate(self.ranks):
            if not np.array_equal(np.sort(row), expected):
                raise ValidationError(f"rank row {i} is not a permutation of 1..{n_k}")


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise ValidationError(
            f"vision dim {a.shape[1]} incompatible with text dim {b.shape[1]}"
        )
    na = np.linalg.norm(a, axis=1, keepdims=True)
    nb = np.linalg.norm(b, axis=1, keepdims=True)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValidationError("zero vector in similarity computation")
    return np.clip((a / na) @ (b / nb).T, -1.0, 1.0)


def rank_keywords(
    cluster_embeddings: np.ndarray, text_table: TextEmbeddingTable, cluster_id: int = 0
) -> RankTable:
    """Rank every keyword per patch: ascending similarity gets ascending rank."""
    sims = cosine_matrix(cluster_embeddings, text_table.embeddings)
    n_p, n_k = sims.shape
    ranks = np.empty((n_p, n_k), dtype=np.int64)
    positions = np.arange(1, n_k + 1)
    for i in range(n_p):
        # stable sort: equal similarities keep keyword-index order, so the
        # lower-indexed keyword receives the lower rank
        order = np.argsort(sims[i], kind="stable")
        ranks[i, order] = positions
    return RankTable(cluster_id, ranks, sims, keywords=text_table.keywords)


def select_representative(rank_table: RankTable, top_m: int) -> list[SelectedKeyword]:
    """Pick the min(top_m, N_K) keywords with the largest rank sums, best-first."""
    if top_m < 1:
        raise ValidationError("top_m must be >= 1")
    rank_sums = rank_table.ranks.sum(axis=0)
    mean_sims = rank_table.similarities.mean(axis=0)
    n_k = rank_sums.shape[0]
    order = sorted(range(n_k), key=lambda j: (-rank_sums[j], -mean_sims[j], j))
    return [
        SelectedKeyword(
            keyword=rank_table.keywords[j],
            aggregated_rank=float(rank_sums[j]),
            mean_similarity=float(mean_sims[j]),
        )
        for j in order[: min(top_m, n_k)]
    ]


def align_clusters(
    embeddings: np.ndarray,
    clusters: ClusterModel,
    text_table: TextEmbeddingTable,
    top_m: int,
) -> ClusterKeywords:
    """Run rank-and-select for every cluster of a slide."""
    per_cluster = []
    for c in range(clusters.k):
        members = embeddings[clusters.assignments == c]
        if members.shape[0] == 0:
            raise ValidationError(f"cluster {c} has no members")
        table = rank_keywords(members, text_table, cluster_id=c)
        per_cluster.append(select_representative(table, top_m))
    return ClusterKeywords(top_m=top_m, per_cluster=per_cluster)
