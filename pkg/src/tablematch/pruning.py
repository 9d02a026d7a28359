"""Density-based cluster pruning.

Within each pre-matched cluster, every record gets one of three labels
from its neighborhood: the cluster members (itself included) within
cosine distance ``radius``:

* core: neighborhood has at least ``min_neighbors`` members;
* reachable: not core, but some core lies in its neighborhood while the
  neighborhood stays below ``min_neighbors``;
* noise: neither, removed by pruning.

Neighborhoods never cross cluster boundaries, and labels partition the
cluster. Note that with ``min_neighbors=2`` the reachable class is empty
by construction: any record with a core neighbor already has two
neighborhood members and is itself core. Label counts are surfaced in the
diagnostics so this is visible rather than silently reinterpreted.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tables import Cluster, EntityRef, make_cluster

CORE = "core"
REACHABLE = "reachable"
NOISE = "noise"


@dataclass
class PruneParams:
    radius: float = 0.4
    min_neighbors: int = 2

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError("radius must be >= 0")
        if self.min_neighbors < 1:
            raise ValueError("min_neighbors must be >= 1")


@dataclass(frozen=True)
class EntityLabel:
    ref: EntityRef
    label: str
    neighbor_count: int


def _distance_matrix(members: list[EntityRef], embeddings) -> np.ndarray:
    mat = np.stack([embeddings[r] for r in members]).astype(np.float32)
    dist = 1.0 - mat @ mat.T
    np.clip(dist, 0.0, 2.0, out=dist)
    np.fill_diagonal(dist, 0.0)
    return dist


def neighborhood(
    cluster: Cluster, entity: EntityRef, embeddings, radius: float
) -> set[EntityRef]:
    """Cluster members within ``radius`` of ``entity`` (self-inclusive)."""
    if entity not in cluster.members:
        raise ValueError(f"{entity} is not a member of the cluster")
    members = cluster.sorted_members()
    dist = _distance_matrix(members, embeddings)
    i = members.index(entity)
    return {members[j] for j in np.flatnonzero(dist[i] <= radius)}


def classify(cluster: Cluster, embeddings, params: PruneParams) -> list[EntityLabel]:
    """Label every member core/reachable/noise; cores are fixed first, then
    reachables are judged against that core set."""
    members = cluster.sorted_members()
    dist = _distance_matrix(members, embeddings)
    within = dist <= params.radius
    counts = within.sum(axis=1)
    is_core = counts >= params.min_neighbors
    near_core = (within & is_core[None, :]).any(axis=1)
    labels = []
    for i, ref in enumerate(members):
        if is_core[i]:
            label = CORE
        elif near_core[i] and counts[i] < params.min_neighbors:
            label = REACHABLE
        else:
            label = NOISE
        labels.append(EntityLabel(ref, label, int(counts[i])))
    return labels


def prune(clusters: list[Cluster], embeddings, params: PruneParams) -> list[Cluster]:
    """Drop noise members; clusters left with fewer than two members vanish."""
    return prune_with_labels(clusters, embeddings, params)[0]


def prune_with_labels(
    clusters: list[Cluster], embeddings, params: PruneParams
) -> tuple[list[Cluster], list[list[EntityLabel]]]:
    kept: list[Cluster] = []
    all_labels: list[list[EntityLabel]] = []
    for cluster in clusters:
        labels = classify(cluster, embeddings, params)
        all_labels.append(labels)
        survivors = [lab.ref for lab in labels if lab.label != NOISE]
        if len(survivors) >= 2:
            kept.append(make_cluster(survivors))
    return kept, all_labels


def label_counts(all_labels: list[list[EntityLabel]]) -> dict[str, int]:
    counts = {CORE: 0, REACHABLE: 0, NOISE: 0}
    for labels in all_labels:
        for lab in labels:
            counts[lab.label] += 1
    return counts


def write_labels_csv(all_labels: list[list[EntityLabel]], path: Path | str) -> None:
    """Diagnostic dump: one row per member with its cluster id and label."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["table_id", "row_index", "cluster_id", "label", "neighbor_count"])
        for cid, labels in enumerate(all_labels):
            for lab in sorted(labels, key=lambda l: l.ref):
                writer.writerow(
                    [lab.ref.table_id, lab.ref.row_index, cid, lab.label, lab.neighbor_count]
                )
