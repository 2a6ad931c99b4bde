"""Command-line entry point.

Exit codes: 0 success, 2 missing/malformed inputs, 3 validation failure,
4 numeric failure.
"""
from __future__ import annotations

import functools
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__, alignment, clustering, fusion, metrics, mil, pipeline, store
from .encoders import make_encoder
from .errors import FormatError, NumericError, ValidationError

EXIT_MISSING_INPUT = 2
EXIT_VALIDATION = 3
EXIT_NUMERIC = 4


def _handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (FileNotFoundError, FormatError) as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_MISSING_INPUT)
        except ValidationError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_VALIDATION)
        except NumericError as exc:
            click.echo(f"error: {exc}", err=True)
            sys.exit(EXIT_NUMERIC)

    return wrapper


@click.group()
@click.version_option(version=__version__, prog_name="vleer")
@click.option("--threads", type=int, default=None,
              help="Worker thread budget (default: VLEER_THREADS or all cores).")
def main(threads):
    """Vision-language embeddings for explainable WSI analysis."""
    if threads is None:
        threads = int(os.environ.get("VLEER_THREADS", os.cpu_count() or 1))
    # All stages are deterministic regardless of this value; it only caps
    # intra-stage parallelism.
    os.environ["VLEER_THREADS"] = str(threads)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--seed", default=0, show_default=True)
@click.option("--slides", default=20, show_default=True)
@click.option("--classes", default=2, show_default=True)
@click.option("--d-v", default=16, show_default=True)
@click.option("--keywords", "n_keywords", default=12, show_default=True)
@click.option("--class-separation", default=2.0, show_default=True)
@click.option("--text-signal", default=4.0, show_default=True)
@click.option("--slide-noise", default=0.0, show_default=True)
@_handle_errors
def synth(out_dir, seed, slides, classes, d_v, n_keywords, class_separation,
          text_signal, slide_noise):
    """Generate a seeded synthetic cohort fixture."""
    spec = store.SyntheticSpec(
        n_slides=slides,
        n_classes=classes,
        d_v=d_v,
        d_t=d_v,
        n_keywords=n_keywords,
        class_separation=class_separation,
        text_signal=text_signal,
        slide_noise=slide_noise,
    )
    cohort = store.generate_synthetic_cohort(spec, seed)
    store.save_cohort(cohort, out_dir)
    click.echo(f"wrote {slides} bundles to {out_dir}")


@main.command()
@click.option("--bundle", required=True, type=click.Path())
@click.option("--k", default=5, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--max-iter", default=100, show_default=True)
@click.option("--tol", default=1e-4, show_default=True)
@click.option("--normalize", is_flag=True, help="L2-normalize rows before clustering.")
@click.option("--out", required=True, type=click.Path())
@_handle_errors
def cluster(bundle, k, seed, max_iter, tol, normalize, out):
    """Partition a bundle's embeddings with Lloyd's k-means."""
    b = store.read_bundle(bundle)
    model = clustering.kmeans(b.embeddings, k, seed=seed, max_iter=max_iter,
                              tol=tol, normalize=normalize)
    store.save_cluster_model(model, out)
    click.echo(f"k={model.k} inertia={model.inertia:.6g} sizes={clustering.cluster_sizes(model)}")


@main.command("embed-keywords")
@click.option("--pool", required=True, type=click.Path())
@click.option("--encoder", "encoder_spec", required=True,
              help="'hash:<dim>' or path to an encoder.json file.")
@click.option("--out", required=True, type=click.Path())
@_handle_errors
def embed_keywords(pool, encoder_spec, out):
    """Embed all pool keywords with template averaging."""
    p = store.load_keyword_pool(pool)
    table = alignment.embed_keywords(p, make_encoder(encoder_spec))
    store.save_text_table(table, out)
    click.echo(f"embedded {p.n_keywords} keywords (d_t={table.dim})")


@main.command()
@click.option("--bundle", required=True, type=click.Path())
@click.option("--clusters", "clusters_path", required=True, type=click.Path())
@click.option("--pool", required=True, type=click.Path())
@click.option("--text-emb", required=True, type=click.Path())
@click.option("--top", "top_m", default=5, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_handle_errors
def align(bundle, clusters_path, pool, text_emb, top_m, out):
    """Select top-M representative keywords per cluster."""
    b = store.read_bundle(bundle)
    model = store.load_cluster_model(clusters_path)
    store.load_keyword_pool(pool)  # validated for error reporting
    table = store.load_text_table(text_emb)
    keywords = alignment.align_clusters(b.embeddings, model, table, top_m)
    store.save_cluster_keywords(keywords, out)
    click.echo(f"selected {top_m} keywords for each of {model.k} clusters")


@main.command()
@click.option("--bundle", required=True, type=click.Path())
@click.option("--clusters", "clusters_path", required=True, type=click.Path())
@click.option("--keywords", "keywords_path", required=True, type=click.Path())
@click.option("--encoder", "encoder_spec", required=True)
@click.option("--out", required=True, type=click.Path())
@_handle_errors
def fuse(bundle, clusters_path, keywords_path, encoder_spec, out):
    """Concatenate cluster text embeddings onto patch embeddings."""
    b = store.read_bundle(bundle)
    model = store.load_cluster_model(clusters_path)
    keywords = store.load_cluster_keywords(keywords_path)
    encoder = make_encoder(encoder_spec)
    cluster_text = fusion.cluster_text_matrix(keywords, encoder)
    fb = fusion.fuse(b, model, cluster_text,
                     provenance={"bundle": str(bundle), "keywords": str(keywords_path)})
    store.write_fused(fb, out)
    click.echo(f"fused {fb.fused.shape[0]} patches to width {fb.fused.shape[1]}")


def _load_labeled_dir(data_dir, fused: bool):
    data_dir = Path(data_dir)
    paths = sorted(data_dir.glob("*.vleb"))
    if not paths:
        raise FileNotFoundError(f"no .vleb files in {data_dir}")
    if fused:
        return [store.read_fused(p) for p in paths]
    return [store.read_bundle(p) for p in paths]


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path(),
              help="Directory of labeled .vleb files.")
@click.option("--fused/--vision", default=False,
              help="Treat inputs as fused bundles (with sidecars).")
@click.option("--epochs", default=20, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--d-hid", default=128, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path())
@_handle_errors
def train(data_dir, fused, epochs, lr, d_hid, seed, out):
    """Train the gated-attention MIL aggregator."""
    bundles = _load_labeled_dir(data_dir, fused)
    bags = pipeline._bags(bundles, fused)
    config = mil.TrainConfig(epochs=epochs, lr=lr, seed=seed, d_hid=d_hid)
    model, trace = mil.train(bags, config)
    mil.save_model(model, out)
    click.echo(f"final epoch loss {trace[-1]:.6f}; model written to {out}")


@main.command()
@click.option("--data", "data_dir", required=True, type=click.Path())
@click.option("--fused/--vision", default=False)
@click.option("--model", "model_path", type=click.Path(), default=None,
              help="Evaluate a saved model instead of retraining per seed.")
@click.option("--seeds", default=5, show_default=True,
              help="Number of train/evaluate repetitions.")
@click.option("--epochs", default=20, show_default=True)
@click.option("--lr", default=1e-4, show_default=True)
@click.option("--d-hid", default=128, show_default=True)
@click.option("--report", "report_path", required=True, type=click.Path())
@_handle_errors
def evaluate(data_dir, fused, model_path, seeds, epochs, lr, d_hid, report_path):
    """Run the repeated-seed evaluation protocol and write a report."""
    bundles = _load_labeled_dir(data_dir, fused)
    if model_path:
        model = mil.load_model(model_path)
        bags = pipeline._bags(bundles, fused)
        y_true = [label for _, label in bags]
        probs = np.array([mil.predict_proba(model, bag) for bag, _ in bags])
        y_pred = probs.argmax(axis=1)
        report = {
            "model": str(model_path),
            "acc": metrics.accuracy(y_true, y_pred),
            "f1": metrics.weighted_f1(y_true, y_pred),
            "auc": metrics.auc(y_true, probs),
        }
    else:
        seed_list = list(range(seeds))
        _, _, per_seed, summary = pipeline.run_experiment(
            bundles, seed_list, epochs, lr, d_hid, fused
        )
        report = {
            "per_seed": [{"seed": s, **run} for s, run in zip(seed_list, per_seed)],
            "summary": summary,
        }
    Path(report_path).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n")
    click.echo(json.dumps(report.get("summary", report), sort_keys=True))


@main.command()
@click.option("--bundle", required=True, type=click.Path())
@click.option("--clusters", "clusters_path", required=True, type=click.Path())
@click.option("--keywords", "keywords_path", required=True, type=click.Path())
@click.option("--model", "model_path", required=True, type=click.Path())
@click.option("--fused-bundle", type=click.Path(), default=None,
              help="Fused .vleb to feed the model (model trained on fused input).")
@click.option("--connectivity", default=4, show_default=True, type=click.Choice(["4", "8"]))
@click.option("--out-dir", required=True, type=click.Path())
@_handle_errors
def explain(bundle, clusters_path, keywords_path, model_path, fused_bundle,
            connectivity, out_dir):
    """Emit the attention heatmap and region keyword annotation for a slide."""
    b = store.read_bundle(bundle)
    clusters = store.load_cluster_model(clusters_path)
    keywords = store.load_cluster_keywords(keywords_path)
    model = mil.load_model(model_path)
    fused_matrix = store.read_fused(fused_bundle).fused if fused_bundle else None
    heatmap, annot = pipeline.explain_slide(
        b, clusters, keywords, model, out_dir,
        fused_matrix=fused_matrix, connectivity=int(connectivity),
    )
    click.echo(f"wrote {heatmap} and {annot}")


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path())
@_handle_errors
def pipeline_cmd(config_path):
    """Run the full pipeline from a JSON config file."""
    manifest = pipeline.run_pipeline(config_path)
    click.echo(f"pipeline complete: {len(manifest['artifacts'])} artifacts")


@main.command()
@click.option("--bundle", required=True, type=click.Path())
@_handle_errors
def validate(bundle):
    """Read a VLEB file and check all bundle invariants."""
    b = store.read_bundle(bundle)
    click.echo(f"ok: {b.slide_id} n_patches={b.n_patches} dim={b.dim} label={b.label}")


if __name__ == "__main__":
    main()
