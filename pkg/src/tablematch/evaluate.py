"""Tuple-exact scoring, hyperparameter sweeps, and stage ablations.

A predicted cluster counts as correct only when its member set equals a
ground-truth cluster's member set exactly. Ground-truth clusters with a
single member are excluded before scoring, mirroring the matcher's rule
of never emitting singletons.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace

from .config import PipelineConfig
from .coordination import CoordinatedDataset, coordinate, passthrough
from .embedding import embed_dataset
from .matching import MatchPair, MatchParams, collect_pairs, transitive_merge
from .pruning import prune
from .tables import Cluster, Dataset, validate_disjoint

logger = logging.getLogger(__name__)

SWEEPABLE = ("lambda", "d")


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    predicted_count: int
    truth_count: int
    correct_count: int
    stage_counts: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if self.correct_count > min(self.predicted_count, self.truth_count):
            raise ValueError("correct_count exceeds predicted or truth count")
        p, r = self.precision, self.recall
        expected_f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        if abs(self.f1 - expected_f1) > 1e-12:
            raise ValueError(f"f1 {self.f1} inconsistent with P={p}, R={r}")

    def metrics(self) -> tuple[float, float, float]:
        return (self.precision, self.recall, self.f1)

    def to_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "predicted_count": self.predicted_count,
            "truth_count": self.truth_count,
            "correct_count": self.correct_count,
            "stage_counts": dict(self.stage_counts),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def format_report_table(report: EvalReport) -> str:
    """Aligned two-column text rendering of a report."""
    rows = [
        ("precision", f"{report.precision:.4f}"),
        ("recall", f"{report.recall:.4f}"),
        ("f1", f"{report.f1:.4f}"),
        ("predicted", str(report.predicted_count)),
        ("truth", str(report.truth_count)),
        ("correct", str(report.correct_count)),
    ]
    rows += [(f"clusters[{k}]", str(v)) for k, v in report.stage_counts.items()]
    width = max(len(name) for name, _ in rows)
    return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


def score(
    predicted: list[Cluster],
    truth: list[Cluster],
    stage_counts: dict[str, int] | None = None,
) -> EvalReport:
    """Tuple-exact precision/recall/F1 via strict member-set equality.

    Precision is defined as 0 when there are no predictions. Raises if the
    (singleton-filtered) truth is empty or either side has overlapping
    clusters.
    """
    truth_multi = [c for c in truth if len(c) >= 2]
    if not truth_multi:
        raise ValueError("nothing to evaluate: no ground-truth clusters of size >= 2")
    validate_disjoint(truth_multi, context="truth clusters")
    validate_disjoint(predicted, context="predicted clusters")
    truth_sets = {c.members for c in truth_multi}
    correct = sum(1 for c in predicted if c.members in truth_sets)
    precision = correct / len(predicted) if predicted else 0.0
    recall = correct / len(truth_multi)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return EvalReport(
        precision=precision,
        recall=recall,
        f1=f1,
        predicted_count=len(predicted),
        truth_count=len(truth_multi),
        correct_count=correct,
        stage_counts=stage_counts or {},
    )


@dataclass
class SweepSpec:
    parameter: str  # "lambda" or "d"
    values: list[float]

    def __post_init__(self):
        if self.parameter not in SWEEPABLE:
            raise ValueError(f"parameter must be one of {SWEEPABLE}")
        if not self.values:
            raise ValueError("sweep needs at least one value")
        if sorted(self.values) != list(self.values):
            raise ValueError("sweep values must be ascending")


def coordinated_for(dataset: Dataset, config: PipelineConfig) -> CoordinatedDataset:
    if "coordination" in config.disable:
        return passthrough(dataset)
    return coordinate(
        dataset,
        mode=config.coordination_mode,
        template=config.prompt_template(),
        tm_config=config.tm_config(),
        sample_k=config.sample_k,
        seed=config.seed,
    )


def clusters_for(
    pairs: list[MatchPair], embeddings, config: PipelineConfig
) -> tuple[list[Cluster], list[Cluster]]:
    """(merged, final) cluster lists for a pair set under ``config``."""
    merged = transitive_merge(pairs)
    if "pruning" in config.disable:
        return merged, merged
    return merged, prune(merged, embeddings, config.prune_params())


def run_stages(dataset: Dataset, config: PipelineConfig) -> EvalReport:
    """Coordinate, embed, match, prune and score one configuration."""
    coordinated = coordinated_for(dataset, config)
    embeddings = embed_dataset(coordinated, config.embedder_config())
    pairs = collect_pairs(embeddings, dataset, config.match_params())
    merged, final = clusters_for(pairs, embeddings, config)
    if dataset.ground_truth is None:
        raise ValueError("dataset has no ground truth to score against")
    return score(
        final,
        dataset.ground_truth,
        stage_counts={"merged": len(merged), "final": len(final)},
    )


def ablate(dataset: Dataset, config: PipelineConfig, disable: set[str]) -> EvalReport:
    """Run the pipeline with the listed stages bypassed.

    Disabling coordination feeds raw serialized records to the embedder;
    disabling pruning reports the merged clusters as final output.
    """
    merged_disable = frozenset(config.disable | set(disable))
    return run_stages(dataset, replace(config, disable=merged_disable))


def sweep(
    dataset: Dataset, config: PipelineConfig, spec: SweepSpec
) -> list[tuple[float, EvalReport]]:
    """Score the pipeline across one parameter grid, reusing shared work.

    Embeddings are computed once. For a ``lambda`` sweep the mutual top-1
    relation is also computed once (it does not depend on the distance
    cap) and re-filtered per value; for a ``d`` sweep the merged clusters
    are computed once and re-pruned per value.
    """
    if dataset.ground_truth is None:
        raise ValueError("sweep requires ground truth")
    coordinated = coordinated_for(dataset, config)
    embeddings = embed_dataset(coordinated, config.embedder_config())
    results = []
    if spec.parameter == "lambda":
        open_params = MatchParams(
            threshold=2.0,
            ann=config.hnsw_params(),
            exact_threshold=config.exact_threshold,
            workers=config.workers,
        )
        raw_pairs = collect_pairs(embeddings, dataset, open_params)
        for value in spec.values:
            kept = [p for p in raw_pairs if p.distance <= value]
            point = replace(config, match_threshold=value)
            merged, final = clusters_for(kept, embeddings, point)
            results.append(
                (
                    value,
                    score(
                        final,
                        dataset.ground_truth,
                        stage_counts={"merged": len(merged), "final": len(final)},
                    ),
                )
            )
    else:
        pairs = collect_pairs(embeddings, dataset, config.match_params())
        merged = transitive_merge(pairs)
        for value in spec.values:
            point = replace(config, prune_radius=value)
            if "pruning" in point.disable:
                final = merged
            else:
                final = prune(merged, embeddings, point.prune_params())
            results.append(
                (
                    value,
                    score(
                        final,
                        dataset.ground_truth,
                        stage_counts={"merged": len(merged), "final": len(final)},
                    ),
                )
            )
    return results
