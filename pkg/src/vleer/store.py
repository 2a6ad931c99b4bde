"""On-disk data model for the pipeline.

Covers the binary patch-embedding bundle format (magic ``VLEB``), the
JSON keyword pool / text-embedding-table / cluster-model / cluster-keywords
files, fused bundles with their provenance sidecar, and the seeded
synthetic cohort generator used by the test and acceptance suites.

VLEB layout (little-endian, bit-exact):
    magic "VLEB" | u16 version=1 | u32 n_patches | u32 dim
    | n_patches x (u32 row, u32 col)
    | n_patches*dim float32 row-major
    | optional 1-byte class label
"""
from __future__ import annotations

import dataclasses
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import FormatError, ValidationError

VLEB_MAGIC = b"VLEB"
VLEB_VERSION = 1
_HEADER = struct.Struct("<4sHII")


def _check_finite(matrix: np.ndarray, what: str) -> None:
    bad = ~np.isfinite(matrix)
    if bad.any():
        row = int(np.argwhere(bad.any(axis=1))[0, 0])
        raise ValidationError(f"{what} contains NaN/Inf at row {row}")


@dataclass
class EmbeddingBundle:
    """One slide's patch grid coordinates and visual embedding matrix."""

    slide_id: str
    patch_coords: list[tuple[int, int]]
    embeddings: np.ndarray  # (n_patches, dim) float32
    label: Optional[int] = None
    patch_size_px: int = 256  # metadata only, not serialized

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float32)
        if self.embeddings.ndim != 2:
            raise ValidationError("embeddings must be a 2-D matrix")
        self.patch_coords = [(int(r), int(c)) for r, c in self.patch_coords]
        self.validate()

    @property
    def n_patches(self) -> int:
        return self.embeddings.shape[0]

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def validate(self) -> None:
        n = self.embeddings.shape[0]
        if n < 1:
            raise ValidationError("bundle must contain at least one patch")
        if len(self.patch_coords) != n:
            raise ValidationError(
                f"coordinate count {len(self.patch_coords)} != embedding rows {n}"
            )
        if len(set(self.patch_coords)) != n:
            raise ValidationError("duplicate patch coordinates")
        if any(r < 0 or c < 0 for r, c in self.patch_coords):
            raise ValidationError("negative grid coordinates")
        _check_finite(self.embeddings, "embeddings")
        if self.patch_size_px <= 0:
            raise ValidationError("patch_size_px must be positive")
        if self.label is not None and not 0 <= int(self.label) <= 255:
            raise ValidationError("label must fit in one byte")


def write_bundle(bundle: EmbeddingBundle, path) -> None:
    """Serialize a bundle to the VLEB binary format.

    The slide id is not part of the byte layout; it is carried by the
    file name (``read_bundle`` recovers it from the stem).
    """
    bundle.validate()
    path = Path(path)
    n, d = bundle.embeddings.shape
    parts = [_HEADER.pack(VLEB_MAGIC, VLEB_VERSION, n, d)]
    coords = np.asarray(bundle.patch_coords, dtype="<u4")
    parts.append(coords.tobytes())
    parts.append(np.ascontiguousarray(bundle.embeddings, dtype="<f4").tobytes())
    if bundle.label is not None:
        parts.append(bytes([int(bundle.label)]))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


def read_bundle(path) -> EmbeddingBundle:
    """Read and validate a VLEB file."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file shorter than VLEB header")
    magic, version, n, d = _HEADER.unpack_from(raw)
    if magic != VLEB_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {VLEB_MAGIC!r}")
    if version != VLEB_VERSION:
        raise FormatError(f"{path}: unsupported VLEB version {version}")
    coord_bytes = n * 8
    payload_bytes = n * d * 4
    need = _HEADER.size + coord_bytes + payload_bytes
    if len(raw) < need:
        raise FormatError(
            f"{path}: truncated payload, need {need} bytes, have {len(raw)}"
        )
    off = _HEADER.size
    coords = np.frombuffer(raw, dtype="<u4", count=2 * n, offset=off).reshape(n, 2)
    off += coord_bytes
    emb = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += payload_bytes
    label = raw[off] if len(raw) > off else None
    return EmbeddingBundle(
        slide_id=_strip_vleb_suffix(path),
        patch_coords=[(int(r), int(c)) for r, c in coords],
        embeddings=emb.copy(),
        label=label,
    )


def _strip_vleb_suffix(path: Path) -> str:
    name = path.name
    return name[:-5] if name.endswith(".vleb") else path.stem


# ---------------------------------------------------------------------------
# keyword pool


@dataclass
class KeywordPool:
    """Task keywords grouped by histology class, plus prompt templates."""

    task_name: str
    classes: list[tuple[str, list[str]]]
    templates: list[str]

    def __post_init__(self):
        self.classes = [(str(n), list(kws)) for n, kws in self.classes]
        self.validate()

    @property
    def keywords(self) -> list[str]:
        """All keywords flattened in class order."""
        return [kw for _, kws in self.classes for kw in kws]

    @property
    def n_keywords(self) -> int:
        return len(self.keywords)

    def validate(self) -> None:
        flat = self.keywords
        if not flat:
            raise ValidationError("keyword pool is empty")
        seen: dict[str, str] = {}
        for kw in flat:
            key = kw.strip().casefold()
            if key in seen:
                raise ValidationError(f"duplicate keyword: {kw!r} vs {seen[key]!r}")
            seen[key] = kw
        if not self.templates:
            raise ValidationError("pool must declare at least one template")
        for t in self.templates:
            if t.count("{}") != 1:
                raise ValidationError(f"template must have exactly one placeholder: {t!r}")


def load_keyword_pool(path) -> KeywordPool:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: invalid pool file: {exc}") from exc
    try:
        classes = [(c["name"], list(c["keywords"])) for c in doc["classes"]]
        return KeywordPool(doc["task"], classes, list(doc["templates"]))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: missing pool field: {exc}") from exc


def save_keyword_pool(pool: KeywordPool, path) -> None:
    doc = {
        "task": pool.task_name,
        "classes": [{"name": n, "keywords": kws} for n, kws in pool.classes],
        "templates": pool.templates,
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# text embedding table


@dataclass
class TextEmbeddingTable:
    """Unit-norm text embedding per keyword, order-aligned with the pool."""

    keywords: list[str]
    embeddings: np.ndarray  # (n_keywords, d_t)

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        self.validate()

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def validate(self) -> None:
        if self.embeddings.ndim != 2 or self.embeddings.shape[0] != len(self.keywords):
            raise ValidationError("embedding rows must match keyword count")
        _check_finite(self.embeddings, "text embeddings")
        norms = np.linalg.norm(self.embeddings, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-5):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise ValidationError(f"text embedding row {bad} is not unit-norm")


def save_text_table(table: TextEmbeddingTable, path) -> None:
    doc = {
        "keywords": table.keywords,
        "d_t": int(table.dim),
        "embeddings": [[float(x) for x in row] for row in table.embeddings],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_text_table(path) -> TextEmbeddingTable:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        table = TextEmbeddingTable(list(doc["keywords"]), np.array(doc["embeddings"]))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: invalid text table: {exc}") from exc
    if table.dim != int(doc["d_t"]):
        raise FormatError(f"{path}: declared d_t {doc['d_t']} != actual {table.dim}")
    return table


# ---------------------------------------------------------------------------
# cluster model


@dataclass
class ClusterModel:
    """Centroids plus per-patch cluster assignments."""

    k: int
    centroids: np.ndarray  # (k, dim)
    assignments: np.ndarray  # (n_patches,) int
    inertia: float

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=np.float64)
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        if self.k <= 0 or self.centroids.shape[0] != self.k:
            raise ValidationError("centroid count must equal k")
        if self.assignments.size and (
            self.assignments.min() < 0 or self.assignments.max() >= self.k
        ):
            raise ValidationError("assignment index out of range")
        if self.inertia < 0:
            raise ValidationError("inertia must be nonnegative")


def save_cluster_model(model: ClusterModel, path) -> None:
    doc = {
        "k": int(model.k),
        "centroids": [[float(x) for x in row] for row in model.centroids],
        "assignments": [int(a) for a in model.assignments],
        "inertia": float(model.inertia),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_cluster_model(path) -> ClusterModel:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return ClusterModel(
            int(doc["k"]),
            np.array(doc["centroids"], dtype=np.float64),
            np.array(doc["assignments"], dtype=np.int64),
            float(doc["inertia"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid cluster model: {exc}") from exc


# ---------------------------------------------------------------------------
# cluster keywords


@dataclass
class SelectedKeyword:
    keyword: str
    aggregated_rank: float
    mean_similarity: float


@dataclass
class ClusterKeywords:
    """Top-M representative keywords per cluster, best-first."""

    top_m: int
    per_cluster: list[list[SelectedKeyword]]

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.top_m < 1:
            raise ValidationError("top_m must be >= 1")
        for c, sel in enumerate(self.per_cluster):
            if not sel:
                raise ValidationError(f"cluster {c} has empty keyword selection")
            names = [s.keyword for s in sel]
            if len(set(names)) != len(names):
                raise ValidationError(f"cluster {c} selected a keyword twice")

    def keywords_for(self, cluster: int) -> list[str]:
        return [s.keyword for s in self.per_cluster[cluster]]


def save_cluster_keywords(ck: ClusterKeywords, path) -> None:
    doc = {
        "top_m": ck.top_m,
        "clusters": [
            {
                "cluster": c,
                "selected": [
                    {
                        "keyword": s.keyword,
                        "aggregated_rank": float(s.aggregated_rank),
                        "mean_similarity": float(s.mean_similarity),
                    }
                    for s in sel
                ],
            }
            for c, sel in enumerate(ck.per_cluster)
        ],
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def load_cluster_keywords(path) -> ClusterKeywords:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        per_cluster = [
            [
                SelectedKeyword(
                    s["keyword"], float(s["aggregated_rank"]), float(s["mean_similarity"])
                )
                for s in entry["selected"]
            ]
            for entry in sorted(doc["clusters"], key=lambda e: e["cluster"])
        ]
        return ClusterKeywords(int(doc["top_m"]), per_cluster)
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: invalid cluster keywords: {exc}") from exc


# ---------------------------------------------------------------------------
# fused bundle


@dataclass
class FusedBundle:
    """Per-patch concatenation of visual embedding and cluster text embedding."""

    slide_id: str
    patch_coords: list[tuple[int, int]]
    fused: np.ndarray  # (n_patches, d_v + d_t) float32
    d_v: int
    d_t: int
    cluster_text: np.ndarray  # (k, d_t) float32
    assignments: np.ndarray
    label: Optional[int] = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.fused = np.asarray(self.fused, dtype=np.float32)
        self.cluster_text = np.asarray(self.cluster_text, dtype=np.float32)
        self.assignments = np.asarray(self.assignments, dtype=np.int64)
        self.validate()

    def validate(self) -> None:
        if self.fused.shape[1] != self.d_v + self.d_t:
            raise ValidationError(
                f"fused width {self.fused.shape[1]} != d_v + d_t = {self.d_v + self.d_t}"
            )
        if self.assignments.shape[0] != self.fused.shape[0]:
            raise ValidationError("assignment count must match fused rows")
        text_block = self.cluster_text[self.assignments]
        if not np.array_equal(
            self.fused[:, self.d_v :].view(np.uint32), text_block.view(np.uint32)
        ):
            raise ValidationError("trailing text block does not match cluster text")


def write_fused(fb: FusedBundle, path) -> None:
    """Write the fused matrix as a VLEB file plus a provenance sidecar."""
    bundle = EmbeddingBundle(fb.slide_id, fb.patch_coords, fb.fused, label=fb.label)
    write_bundle(bundle, path)
    sidecar = {
        "slide_id": fb.slide_id,
        "d_v": int(fb.d_v),
        "d_t": int(fb.d_t),
        "assignments": [int(a) for a in fb.assignments],
        "cluster_text": [[float(x) for x in row] for row in fb.cluster_text],
        "provenance": fb.provenance,
    }
    Path(str(path) + ".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def read_fused(path) -> FusedBundle:
    bundle = read_bundle(path)
    sidecar_path = Path(str(path) + ".json")
    if not sidecar_path.exists():
        raise FormatError(f"{sidecar_path}: fused bundle sidecar missing")
    doc = json.loads(sidecar_path.read_text())
    return FusedBundle(
        slide_id=doc["slide_id"],
        patch_coords=bundle.patch_coords,
        fused=bundle.embeddings,
        d_v=int(doc["d_v"]),
        d_t=int(doc["d_t"]),
        cluster_text=np.array(doc["cluster_text"], dtype=np.float32),
        assignments=np.array(doc["assignments"], dtype=np.int64),
        label=bundle.label,
        provenance=doc.get("provenance", {}),
    )


# ---------------------------------------------------------------------------
# synthetic cohort


@dataclass
class SyntheticSpec:
    """Knobs for the seeded synthetic fixture generator.

    ``class_separation`` scales the distance between class mean directions
    in embedding space; ``text_signal`` scales how strongly a keyword's text
    embedding points along its class direction. ``slide_noise`` adds a
    per-slide offset shared by all patches, which caps vision-only accuracy
    without being averaged away by the aggregator.
    """

    n_slides: int = 20
    n_classes: int = 2
    patches_min: int = 16
    patches_max: int = 64
    d_v: int = 16
    d_t: int = 16
    n_keywords: int = 12
    class_separation: float = 2.0
    text_signal: float = 4.0
    noise: float = 1.0
    slide_noise: float = 0.0
    n_blobs: int = 3
    blob_scale: float = 0.5
    text_noise: float = 1.0

    def validate(self) -> None:
        for name in ("n_slides", "n_classes", "patches_min", "patches_max",
                     "d_v", "d_t", "n_keywords", "n_blobs"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.patches_min > self.patches_max:
            raise ValidationError("patches_min > patches_max")
        if self.n_classes < 2:
            raise ValidationError("need at least two classes")
        if self.d_t != self.d_v:
            raise ValidationError(
                "synthetic generator requires d_t == d_v (shared alignment space)"
            )
        if self.n_keywords < self.n_classes:
            raise ValidationError("need at least one keyword per class")


@dataclass
class SyntheticCohort:
    bundles: list[EmbeddingBundle]
    pool: KeywordPool
    text_table: TextEmbeddingTable
    keyword_vectors: dict[str, np.ndarray]  # raw unit vectors backing the encoder


def _class_directions(rng: np.random.Generator, n_classes: int, dim: int) -> np.ndarray:
    # Orthonormal class directions so separation is isotropic.
    raw = rng.standard_normal((dim, max(n_classes, 2)))
    q, _ = np.linalg.qr(raw)
    return q[:, :n_classes].T.copy()


def generate_synthetic_cohort(spec: SyntheticSpec, seed: int) -> SyntheticCohort:
    """Deterministically generate bundles, pool, and text table for a seed.

    Patch embeddings are per-class Gaussian mixtures arranged in contiguous
    spatial blobs on a raster grid. Keyword text embeddings are biased along
    their class direction by ``text_signal`` so vision-text retrieval prefers
    the true class's keywords.
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    dirs = _class_directions(rng, spec.n_classes, spec.d_v)

    # keyword pool: round-robin keyword split across classes
    class_names = [f"class_{c}" for c in range(spec.n_classes)]
    keywords_per_class: list[list[str]] = [[] for _ in range(spec.n_classes)]
    keyword_class: list[int] = []
    for j in range(spec.n_keywords):
        c = j % spec.n_classes
        keywords_per_class[c].append(f"{class_names[c]} pattern {j:02d}")
        keyword_class.append(c)
    pool = KeywordPool(
        task_name="synthetic",
        classes=list(zip(class_names, keywords_per_class)),
        templates=["a histopathology image showing {}."],
    )

    # keyword vectors, order-aligned with pool flattening (class-major)
    kw_vectors: dict[str, np.ndarray] = {}
    rows = []
    flat_kws = pool.keywords
    flat_classes = sorted(range(spec.n_keywords), key=lambda j: (keyword_class[j], j))
    for idx in flat_classes:
        c = keyword_class[idx]
        vec = spec.text_signal * dirs[c] + spec.text_noise * rng.standard_normal(spec.d_t)
        vec = vec / np.linalg.norm(vec)
        rows.append(vec)
    for kw, vec in zip(flat_kws, rows):
        kw_vectors[kw] = vec
    table = TextEmbeddingTable(flat_kws, np.array(rows))

    bundles = []
    for s in range(spec.n_slides):
        label = s % spec.n_classes
        n_patches = int(rng.integers(spec.patches_min, spec.patches_max + 1))
        cols = int(np.ceil(np.sqrt(n_patches)))
        coords = [(i // cols, i % cols) for i in range(n_patches)]
        slide_offset = spec.slide_noise * rng.standard_normal(spec.d_v)
        blob_offsets = spec.blob_scale * rng.standard_normal((spec.n_blobs, spec.d_v))
        blob_of = (np.arange(n_patches) * spec.n_blobs) // n_patches
        emb = (
            spec.class_separation * dirs[label]
            + slide_offset
            + blob_offsets[blob_of]
            + spec.noise * rng.standard_normal((n_patches, spec.d_v))
        )
        bundles.append(
            EmbeddingBundle(
                slide_id=f"synthetic_{s:04d}",
                patch_coords=coords,
                embeddings=emb.astype(np.float32),
                label=label,
            )
        )
    return SyntheticCohort(bundles, pool, table, kw_vectors)


def save_cohort(cohort: SyntheticCohort, out_dir) -> None:
    """Write a cohort to disk: bundles/, pool.json, text_emb.json, encoder.json."""
    out = Path(out_dir)
    (out / "bundles").mkdir(parents=True, exist_ok=True)
    for b in cohort.bundles:
        write_bundle(b, out / "bundles" / f"{b.slide_id}.vleb")
    save_keyword_pool(cohort.pool, out / "pool.json")
    save_text_table(cohort.text_table, out / "text_emb.json")
    enc = {
        "type": "keyword-lookup",
        "dim": int(cohort.text_table.dim),
        "vectors": {
            kw: [float(x) for x in vec] for kw, vec in cohort.keyword_vectors.items()
        },
    }
    (out / "encoder.json").write_text(json.dumps(enc, sort_keys=True) + "\n")
