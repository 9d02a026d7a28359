"""End-to-end pipeline run with stage timing, caching and artifacts.

Stages run in order: load, coordinate, embed, match (pairs + merge),
prune, score. Every stage's output lands under ``out_dir`` with a stable
filename; coordination and embeddings are cached in ``cache_dir`` keyed
by a content hash of their inputs, so re-runs and sweeps skip the
expensive stages.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import PipelineConfig
from .coordination import CoordinatedDataset
from .embedding import embed_dataset
from .evaluate import EvalReport, coordinated_for, score
from .matching import collect_pairs, transitive_merge, write_pairs_csv
from .pruning import label_counts, prune_with_labels, write_labels_csv
from .tables import Dataset, EntityRef, load_dataset, write_clusters_csv

logger = logging.getLogger(__name__)

ARTIFACTS = {
    "coordinated": "coordinated.csv",
    "pairs": "pairs.csv",
    "clusters_merged": "clusters_merged.csv",
    "clusters": "clusters.csv",
    "labels": "labels.csv",
    "report": "report.json",
    "error": "error.json",
}


@dataclass
class PipelineResult:
    report: EvalReport | None
    timings: dict[str, float]
    artifacts: dict[str, Path]
    final_clusters: list = field(default_factory=list)


def _dataset_fingerprint(coordinated_input: list[tuple[EntityRef, str]]) -> str:
    h = hashlib.sha256()
    for ref, text in coordinated_input:
        h.update(f"{ref.table_id},{ref.row_index}\x1f{text}\x1e".encode("utf-8"))
    return h.hexdigest()[:20]


def _coordination_cache_key(dataset: Dataset, config: PipelineConfig) -> str:
    from .coordination import passthrough

    raw = passthrough(dataset)
    h = hashlib.sha256()
    h.update(_dataset_fingerprint(raw.items()).encode())
    mode = "passthrough" if "coordination" in config.disable else config.coordination_mode
    h.update(
        f"|{mode}|{config.prompt_style}|{config.tm_endpoint}|{config.tm_model}"
        f"|{config.sample_k}|{config.seed}".encode()
    )
    return h.hexdigest()[:20]


def _embed_cache_key(coordinated: CoordinatedDataset, config: PipelineConfig) -> str:
    h = hashlib.sha256()
    h.update(_dataset_fingerprint(coordinated.items()).encode())
    e = config.embedder_config()
    h.update(f"|{e.kind}|{e.dimension}|{e.max_seq_length}|{e.ngram_n}".encode())
    return h.hexdigest()[:20]


def _load_coordination_cache(path: Path, dataset: Dataset) -> CoordinatedDataset:
    entries = json.loads(path.read_text(encoding="utf-8"))
    texts = {EntityRef(t, r): text for t, r, text in entries}
    return CoordinatedDataset(dataset, texts)


def _save_coordination_cache(path: Path, coordinated: CoordinatedDataset) -> None:
    entries = [[ref.table_id, ref.row_index, text] for ref, text in coordinated.items()]
    path.write_text(json.dumps(entries), encoding="utf-8")


def _load_embedding_cache(path: Path) -> dict[EntityRef, np.ndarray]:
    data = np.load(path)
    tables, rows, mat = data["tables"], data["rows"], data["vectors"]
    return {
        EntityRef(int(t), int(r)): mat[i] for i, (t, r) in enumerate(zip(tables, rows))
    }


def _save_embedding_cache(path: Path, embeddings: dict[EntityRef, np.ndarray]) -> None:
    refs = sorted(embeddings)
    np.savez(
        path,
        tables=np.array([r.table_id for r in refs], dtype=np.int32),
        rows=np.array([r.row_index for r in refs], dtype=np.int32),
        vectors=np.stack([embeddings[r] for r in refs]),
    )


def _write_coordinated_csv(coordinated: CoordinatedDataset, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table_id", "row_index", "text"])
        for ref, text in coordinated.items():
            writer.writerow([ref.table_id, ref.row_index, text])


def run_pipeline(config: PipelineConfig, dataset: Dataset | None = None) -> PipelineResult:
    """Execute every stage and write all artifacts.

    On stage failure an ``error.json`` naming the stage is written, any
    artifacts produced so far are left in place, and the error propagates
    to the caller.
    """
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    figures_dir = out_dir / "figures"
    figures_dir.mkdir(exist_ok=True)
    cache_dir = Path(config.cache_dir) if config.cache_dir else None
    if cache_dir:
        cache_dir.mkdir(parents=True, exist_ok=True)

    timings: dict[str, float] = {}
    artifacts: dict[str, Path] = {}
    stage = "load"
    try:
        t0 = time.monotonic()
        if dataset is None:
            dataset = load_dataset(config.dataset_dir)
        timings["load"] = time.monotonic() - t0

        stage = "coordinate"
        t0 = time.monotonic()
        coordinated = None
        coord_cache = None
        if cache_dir:
            coord_cache = cache_dir / f"coord_{_coordination_cache_key(dataset, config)}.json"
            if coord_cache.exists():
                coordinated = _load_coordination_cache(coord_cache, dataset)
                logger.info("coordination cache hit: %s", coord_cache.name)
        if coordinated is None:
            coordinated = coordinated_for(dataset, config)
            if coord_cache:
                _save_coordination_cache(coord_cache, coordinated)
        coordinated_path = out_dir / ARTIFACTS["coordinated"]
        _write_coordinated_csv(coordinated, coordinated_path)
        artifacts["coordinated"] = coordinated_path
        timings["coordinate"] = time.monotonic() - t0

        stage = "embed"
        t0 = time.monotonic()
        embeddings = None
        embed_cache = None
        if cache_dir:
            embed_cache = cache_dir / f"embed_{_embed_cache_key(coordinated, config)}.npz"
            if embed_cache.exists():
                embeddings = _load_embedding_cache(embed_cache)
                logger.info("embedding cache hit: %s", embed_cache.name)
        if embeddings is None:
            embeddings = embed_dataset(coordinated, config.embedder_config())
            if embed_cache:
                _save_embedding_cache(embed_cache, embeddings)
        timings["embed"] = time.monotonic() - t0

        stage = "match"
        t0 = time.monotonic()
        pairs = collect_pairs(embeddings, dataset, config.match_params())
        pairs_path = out_dir / ARTIFACTS["pairs"]
        write_pairs_csv(pairs, pairs_path)
        artifacts["pairs"] = pairs_path
        merged = transitive_merge(pairs)
        merged_path = out_dir / ARTIFACTS["clusters_merged"]
        write_clusters_csv(merged, merged_path)
        artifacts["clusters_merged"] = merged_path
        timings["match"] = time.monotonic() - t0

        stage = "prune"
        t0 = time.monotonic()
        if "pruning" in config.disable:
            final = merged
            labels = None
        else:
            final, all_labels = prune_with_labels(merged, embeddings, config.prune_params())
            labels = all_labels
            labels_path = out_dir / ARTIFACTS["labels"]
            write_labels_csv(all_labels, labels_path)
            artifacts["labels"] = labels_path
        clusters_path = out_dir / ARTIFACTS["clusters"]
        write_clusters_csv(final, clusters_path)
        artifacts["clusters"] = clusters_path
        timings["prune"] = time.monotonic() - t0

        stage = "score"
        t0 = time.monotonic()
        report = None
        if dataset.ground_truth:
            report = score(
                final,
                dataset.ground_truth,
                stage_counts={"merged": len(merged), "final": len(final)},
            )
        timings["score"] = time.monotonic() - t0

        stage = "report"
        from .plots import save_cluster_size_figure, save_label_figure

        save_cluster_size_figure(final, figures_dir / "cluster_sizes.png")
        artifacts["cluster_sizes_figure"] = figures_dir / "cluster_sizes.png"
        if labels is not None:
            save_label_figure(label_counts(labels), figures_dir / "prune_labels.png")
            artifacts["labels_figure"] = figures_dir / "prune_labels.png"
        report_path = out_dir / ARTIFACTS["report"]
        payload = {
            "metrics": report.to_dict() if report else None,
            "timings": {k: round(v, 4) for k, v in timings.items()},
            "config": config.to_dict(),
            "pair_count": len(pairs),
        }
        report_path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
        artifacts["report"] = report_path
        return PipelineResult(
            report=report, timings=timings, artifacts=artifacts, final_clusters=final
        )
    except Exception as err:
        error_path = out_dir / ARTIFACTS["error"]
        error_path.write_text(
            json.dumps({"stage": stage, "error": str(err)}, indent=2), encoding="utf-8"
        )
        logger.error("pipeline failed at stage %s: %s", stage, err)
        raise
