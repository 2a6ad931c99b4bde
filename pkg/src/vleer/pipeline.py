"""End-to-end orchestration: cluster, align, fuse, train, evaluate, explain.

The pipeline works on a cohort directory:

    <data_dir>/
      bundles/*.vleb     labeled patch-embedding bundles
      pool.json          keyword pool
      text_emb.json      keyword text-embedding table (optional; computed
                         from the encoder when absent)
      encoder.json       keyword-lookup encoder (optional; hash stub otherwise)

Every artifact it writes is hashed into a manifest so reruns can be
checked for bit-identical output.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import alignment, clustering, explain, fusion, metrics, mil, store
from .encoders import HashTextEncoder, load_encoder
from .errors import ValidationError


@dataclass
class Cohort:
    bundles: list[store.EmbeddingBundle]
    pool: store.KeywordPool
    text_table: store.TextEmbeddingTable
    encoder: object


def load_cohort(data_dir) -> Cohort:
    data_dir = Path(data_dir)
    bundle_dir = data_dir / "bundles"
    if not bundle_dir.is_dir():
        raise FileNotFoundError(f"bundle directory not found: {bundle_dir}")
    bundles = [store.read_bundle(p) for p in sorted(bundle_dir.glob("*.vleb"))]
    if not bundles:
        raise FileNotFoundError(f"no .vleb files in {bundle_dir}")
    pool_path = data_dir / "pool.json"
    if not pool_path.exists():
        raise FileNotFoundError(f"keyword pool not found: {pool_path}")
    pool = store.load_keyword_pool(pool_path)

    encoder_path = data_dir / "encoder.json"
    if encoder_path.exists():
        encoder = load_encoder(encoder_path)
    else:
        encoder = HashTextEncoder(bundles[0].dim)

    table_path = data_dir / "text_emb.json"
    if table_path.exists():
        table = store.load_text_table(table_path)
    else:
        table = alignment.embed_keywords(pool, encoder)
    return Cohort(bundles, pool, table, encoder)


def fuse_slide(
    bundle: store.EmbeddingBundle,
    cohort: Cohort,
    k: int,
    top_m: int,
    seed: int,
    normalize: bool = False,
):
    """Cluster one slide, retrieve its keywords, and build the fused bundle."""
    k_eff = min(k, bundle.n_patches)
    clusters = clustering.kmeans(bundle.embeddings, k_eff, seed=seed, normalize=normalize)
    keywords = alignment.align_clusters(
        bundle.embeddings, clusters, cohort.text_table, top_m
    )
    cluster_text = fusion.cluster_text_matrix(keywords, cohort.encoder)
    fused = fusion.fuse(
        bundle,
        clusters,
        cluster_text,
        provenance={"slide_id": bundle.slide_id, "k": k_eff, "top_m": top_m, "seed": seed},
    )
    return clusters, keywords, fused


def _bags(bundles, fused: bool):
    bags = []
    for b in bundles:
        if b.label is None:
            raise ValidationError(f"slide {getattr(b, 'slide_id', '?')} has no label")
        matrix = b.fused if fused else b.embeddings
        bags.append((np.asarray(matrix, dtype=np.float64), int(b.label)))
    return bags


def run_seed(
    bundles,
    seed: int,
    epochs: int,
    lr: float,
    d_hid: int,
    fused: bool,
):
    """One train/evaluate run: seeded stratified split, Adam training,
    test-set Acc / weighted-F1 / AUC."""
    bags = _bags(bundles, fused)
    labels = [label for _, label in bags]
    train_idx, val_idx, test_idx = mil.stratified_split(labels, seed=seed)
    config = mil.TrainConfig(epochs=epochs, lr=lr, seed=seed, d_hid=d_hid)
    model, trace = mil.train(
        [bags[i] for i in train_idx],
        config,
        val_bags=[bags[i] for i in val_idx] or None,
    )
    test = [bags[i] for i in test_idx]
    y_true = [label for _, label in test]
    probs = np.array([mil.predict_proba(model, bag) for bag, _ in test])
    y_pred = probs.argmax(axis=1)
    result = {
        "acc": metrics.accuracy(y_true, y_pred),
        "f1": metrics.weighted_f1(y_true, y_pred),
        "auc": metrics.auc(y_true, probs),
    }
    return model, trace, result


def run_experiment(bundles, seeds, epochs, lr, d_hid, fused: bool):
    """Repeat training over seeds; per-seed metrics plus mean/std summary."""
    per_seed = []
    traces = []
    models = []
    for seed in seeds:
        model, trace, result = run_seed(bundles, seed, epochs, lr, d_hid, fused)
        per_seed.append(result)
        traces.append(trace)
        models.append(model)
    return models, traces, per_seed, metrics.summarize_seeds(per_seed)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def explain_slide(
    bundle: store.EmbeddingBundle,
    clusters: store.ClusterModel,
    keywords: store.ClusterKeywords,
    model: mil.MILModel,
    out_dir,
    fused_matrix=None,
    connectivity: int = 4,
    provenance: dict | None = None,
):
    """Write <slide>.heatmap.png and <slide>.revl.json for one slide."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    matrix = bundle.embeddings if fused_matrix is None else fused_matrix
    attention, probs = mil.forward(model, matrix)
    norm_att = explain.normalize_attention(attention)
    rois = explain.merge_rois(bundle.patch_coords, clusters.assignments, connectivity)
    explain.attach_attention(rois, bundle.patch_coords, norm_att)
    for roi in rois:
        roi.keywords = keywords.keywords_for(roi.cluster_id)
    pred = int(np.argmax(probs))
    annotation = explain.ReVLAnnotation(
        slide_id=bundle.slide_id,
        rois=rois,
        predicted_class=pred,
        probability=float(probs[pred]),
        provenance=provenance or {},
    )
    heatmap_path = out_dir / f"{bundle.slide_id}.heatmap.png"
    annot_path = out_dir / f"{bundle.slide_id}.revl.json"
    explain.render_heatmap(bundle.patch_coords, norm_att, heatmap_path)
    explain.emit_annotation(annotation, annot_path)
    return heatmap_path, annot_path


DEFAULT_CONFIG = {
    "k": 5,
    "top_m": 5,
    "epochs": 20,
    "seeds": [0, 1, 2, 3, 4],
    "lr": 1e-4,
    "d_hid": 128,
    "cluster_seed": 0,
    "embedding": "fused",  # "fused" | "vision"
    "explain_slides": 4,
}


def _write_report_figures(out_dir: Path, traces, per_seed, summary, seeds):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for seed, trace in zip(seeds, traces):
        ax.plot(range(1, len(trace) + 1), trace, label=f"seed {seed}")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title("Training loss per seed")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "loss_curves.png", dpi=100)
    plt.close(fig)

    names = ["acc", "f1", "auc"]
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.arange(len(seeds))
    width = 0.25
    for i, name in enumerate(names):
        vals = [run[name] for run in per_seed]
        ax.bar(x + (i - 1) * width, vals, width, label=name)
        ax.axhline(summary[name]["mean"], linestyle="--", linewidth=0.8,
                   color=f"C{i}")
    ax.set_xticks(x, [f"seed {s}" for s in seeds])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("score")
    ax.set_title("Test metrics per seed (dashed = mean)")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_dir / "metrics.png", dpi=100)
    plt.close(fig)


def run_pipeline(config_path) -> dict:
    """Execute the full pipeline from a JSON config; returns the manifest."""
    config_path = Path(config_path)
    if not config_path.exists():
        raise FileNotFoundError(f"config not found: {config_path}")
    cfg = {**DEFAULT_CONFIG, **json.loads(config_path.read_text())}
    out_dir = Path(cfg["out_dir"]) if "out_dir" in cfg else config_path.parent / "out"
    out_dir.mkdir(parents=True, exist_ok=True)

    if "synthetic" in cfg:
        synth = dict(cfg["synthetic"])
        seed = synth.pop("seed", 0)
        cohort_src = store.generate_synthetic_cohort(store.SyntheticSpec(**synth), seed)
        data_dir = out_dir / "data"
        store.save_cohort(cohort_src, data_dir)
    else:
        if "data_dir" not in cfg:
            raise FileNotFoundError("config must declare data_dir or synthetic")
        data_dir = Path(cfg["data_dir"])
    cohort = load_cohort(data_dir)

    # per-slide clustering, alignment, fusion
    fused_bundles = []
    slide_artifacts = {}
    for bundle in cohort.bundles:
        clusters, keywords, fused = fuse_slide(
            bundle, cohort, cfg["k"], cfg["top_m"], cfg["cluster_seed"]
        )
        sdir = out_dir / "slides" / bundle.slide_id
        sdir.mkdir(parents=True, exist_ok=True)
        store.save_cluster_model(clusters, sdir / "clusters.json")
        store.save_cluster_keywords(keywords, sdir / "keywords.json")
        store.write_fused(fused, sdir / "fused.vleb")
        fused_bundles.append(fused)
        slide_artifacts[bundle.slide_id] = (clusters, keywords, fused)

    # train + evaluate over seeds
    use_fused = cfg["embedding"] == "fused"
    train_input = fused_bundles if use_fused else cohort.bundles
    models, traces, per_seed, summary = run_experiment(
        train_input, cfg["seeds"], cfg["epochs"], cfg["lr"], cfg["d_hid"], use_fused
    )
    mil.save_model(models[0], out_dir / "model.bin")
    report = {
        "config": {
            key: cfg[key]
            for key in sorted(cfg)
            if key not in ("synthetic", "out_dir", "data_dir")
        },
        "embedding": cfg["embedding"],
        "per_seed": [
            {"seed": s, **run} for s, run in zip(cfg["seeds"], per_seed)
        ],
        "summary": summary,
    }
    (out_dir / "report.json").write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    lines = ["seed,acc,f1,auc"]
    for s, run in zip(cfg["seeds"], per_seed):
        lines.append(f"{s},{run['acc']:.6f},{run['f1']:.6f},{run['auc']:.6f}")
    lines.append(
        "mean,{:.6f},{:.6f},{:.6f}".format(
            summary["acc"]["mean"], summary["f1"]["mean"], summary["auc"]["mean"]
        )
    )
    (out_dir / "report.csv").write_text("\n".join(lines) + "\n")
    _write_report_figures(out_dir, traces, per_seed, summary, cfg["seeds"])

    # explainability artifacts for the first few slides; provenance carries a
    # hash of the effective config so reruns stay byte-identical
    config_hash = hashlib.sha256(
        json.dumps(report["config"], sort_keys=True).encode()
    ).hexdigest()
    for bundle in cohort.bundles[: int(cfg["explain_slides"])]:
        clusters, keywords, fused = slide_artifacts[bundle.slide_id]
        explain_slide(
            bundle,
            clusters,
            keywords,
            models[0],
            out_dir / "explain",
            fused_matrix=fused.fused if use_fused else None,
            provenance={"config_sha256": config_hash},
        )

    manifest = {"artifacts": {}}
    for path in sorted(out_dir.rglob("*")):
        if path.is_file() and path.name != "manifest.json":
            manifest["artifacts"][str(path.relative_to(out_dir))] = sha256_file(path)
    (out_dir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    return manifest
