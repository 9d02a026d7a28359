"""Cross-table pre-matching: mutual top-1 pairs and transitive merging.

For every unordered pair of tables, a record pair (a, b) is kept when each
record is the other's nearest neighbor in the opposite table and their
cosine distance is at most ``threshold``. Pairs from all table pairs are
then merged into clusters via union-find, so records linked indirectly end
up in one cluster.

Table pairs are independent; with ``workers > 1`` nearest-neighbor work is
fanned out across processes (fork), and results are identical to the
serial path.
"""

from __future__ import annotations

import csv
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .ann import EXACT_FALLBACK_MAX_ROWS, ExactIndex, HnswParams, make_index
from .tables import Cluster, Dataset, EntityRef, make_cluster

logger = logging.getLogger(__name__)

_BATCH_QUERY_CHUNK = 8192


@dataclass(frozen=True)
class MatchPair:
    """A mutual top-1 cross-table pair in canonical order (a < b)."""

    a: EntityRef
    b: EntityRef
    distance: float

    def __post_init__(self):
        if self.a.table_id == self.b.table_id:
            raise ValueError(f"pair endpoints share table {self.a.table_id}")
        if not self.a < self.b:
            raise ValueError(f"pair not in canonical order: {self.a} !< {self.b}")
        if self.distance < 0:
            raise ValueError("negative distance")


@dataclass
class MatchParams:
    """Pre-matching knobs. ``threshold`` is the max admitted cosine distance."""

    threshold: float = 0.3
    ann: HnswParams = field(default_factory=HnswParams)
    exact_threshold: int = EXACT_FALLBACK_MAX_ROWS
    workers: int = 1

    def __post_init__(self):
        if not 0 <= self.threshold <= 2:
            raise ValueError("threshold must be in [0, 2]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


class DisjointSet:
    """Union-find with path compression and union by rank."""

    def __init__(self, size: int):
        self.parent = list(range(size))
        self.rank = [0] * size

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1

    def components(self) -> list[list[int]]:
        groups: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            groups.setdefault(self.find(x), []).append(x)
        return list(groups.values())


def _table_items(
    embeddings: dict[EntityRef, np.ndarray], table_id: int
) -> list[tuple[EntityRef, np.ndarray]]:
    items = sorted(
        ((ref, vec) for ref, vec in embeddings.items() if ref.table_id == table_id),
        key=lambda kv: kv[0],
    )
    if not items:
        raise ValueError(f"no embeddings for table {table_id}")
    return items


def _top1_against(
    index, queries: np.ndarray, key_pos: dict[EntityRef, int], ef: int
) -> tuple[np.ndarray, np.ndarray]:
    """Nearest stored item for each query row: (positions, distances)."""
    n = queries.shape[0]
    top = np.empty(n, dtype=np.int64)
    dist = np.empty(n, dtype=np.float32)
    if isinstance(index, ExactIndex):
        mat = index._vecs
        for start in range(0, n, _BATCH_QUERY_CHUNK):
            chunk = queries[start : start + _BATCH_QUERY_CHUNK]
            d = 1.0 - chunk @ mat.T
            pos = np.argmin(d, axis=1)  # first minimum = smallest ref (items sorted)
            top[start : start + len(pos)] = pos
            dist[start : start + len(pos)] = np.maximum(d[np.arange(len(pos)), pos], 0.0)
    else:
        for i in range(n):
            (ref, d), = index.search(queries[i], 1, ef)
            top[i] = key_pos[ref]
            dist[i] = d
    return top, dist


def _mutual_from_top1(
    refs_a: list[EntityRef],
    refs_b: list[EntityRef],
    top_ab: np.ndarray,
    dist_ab: np.ndarray,
    top_ba: np.ndarray,
    threshold: float,
) -> list[MatchPair]:
    pairs = []
    for i, ref_a in enumerate(refs_a):
        j = int(top_ab[i])
        if int(top_ba[j]) == i:
            d = float(dist_ab[i])
            if d <= threshold:
                pairs.append(MatchPair(ref_a, refs_b[j], d))
    return pairs


def mutual_top1_pairs(
    embeddings: dict[EntityRef, np.ndarray],
    table_a: int,
    table_b: int,
    params: MatchParams | None = None,
) -> list[MatchPair]:
    """Mutual nearest-neighbor pairs between two tables under the distance cap.

    Each record appears in at most one pair for this table pair; top-1 ties
    are broken by the smallest record address.
    """
    params = params or MatchParams()
    if table_a == table_b:
        raise ValueError("table_a and table_b must differ")
    if table_a > table_b:
        table_a, table_b = table_b, table_a
    items_a = _table_items(embeddings, table_a)
    items_b = _table_items(embeddings, table_b)
    index_a = make_index(items_a, params.ann, params.exact_threshold)
    index_b = make_index(items_b, params.ann, params.exact_threshold)
    return _mutual_pairs_with_indexes(items_a, items_b, index_a, index_b, params)


def _mutual_pairs_with_indexes(items_a, items_b, index_a, index_b, params) -> list[MatchPair]:
    refs_a = [r for r, _ in items_a]
    refs_b = [r for r, _ in items_b]
    mat_a = np.ascontiguousarray(np.stack([v for _, v in items_a]), dtype=np.float32)
    mat_b = np.ascontiguousarray(np.stack([v for _, v in items_b]), dtype=np.float32)
    pos_a = {r: i for i, r in enumerate(refs_a)}
    pos_b = {r: i for i, r in enumerate(refs_b)}
    ef = params.ann.ef_search
    top_ab, dist_ab = _top1_against(index_b, mat_a, pos_b, ef)
    top_ba, _ = _top1_against(index_a, mat_b, pos_a, ef)
    return _mutual_from_top1(refs_a, refs_b, top_ab, dist_ab, top_ba, params.threshold)


# --- process-parallel helpers -------------------------------------------------
# Workers are forked after this state is populated, so the large read-only
# structures (index graphs, vector matrices) are inherited, not pickled.

_PAR_STATE: dict = {}


def _par_build(table_id: int):
    items = _PAR_STATE["items"][table_id]
    return table_id, make_index(items, _PAR_STATE["params"].ann, _PAR_STATE["params"].exact_threshold)


def _par_direction(task: tuple[int, int]):
    query_tid, index_tid = task
    state = _PAR_STATE
    top, dist = _top1_against(
        state["indexes"][index_tid],
        state["mats"][query_tid],
        state["pos"][index_tid],
        state["params"].ann.ef_search,
    )
    return task, top, dist


def _fork_pool(workers: int):
    import multiprocessing as mp

    try:
        ctx = mp.get_context("fork")
    except ValueError:
        return None
    return ctx.Pool(workers)


def collect_pairs(
    embeddings: dict[EntityRef, np.ndarray],
    dataset: Dataset,
    params: MatchParams | None = None,
) -> list[MatchPair]:
    """Mutual top-1 pairs over all unordered table pairs, in deterministic order.

    Builds one index per table and reuses it for every pair involving that
    table. The result is independent of ``workers``.
    """
    params = params or MatchParams()
    table_ids = [t.table_id for t in dataset.tables]
    items = {tid: _table_items(embeddings, tid) for tid in table_ids}
    refs = {tid: [r for r, _ in items[tid]] for tid in table_ids}
    mats = {
        tid: np.ascontiguousarray(np.stack([v for _, v in items[tid]]), dtype=np.float32)
        for tid in table_ids
    }
    pos = {tid: {r: i for i, r in enumerate(refs[tid])} for tid in table_ids}

    workers = min(params.workers, os.cpu_count() or 1)
    use_pool = workers > 1 and any(len(items[t]) >= params.exact_threshold for t in table_ids)

    indexes: dict[int, object] = {}
    directions = [
        (qa, qb)
        for qa in table_ids
        for qb in table_ids
        if qa != qb
    ]
    results: dict[tuple[int, int], tuple[np.ndarray, np.ndarray]] = {}

    def _run_parallel(state, fn, tasks):
        """Map tasks over a fork pool sharing ``state``; None if unavailable."""
        _PAR_STATE.update(state)
        pool = _fork_pool(workers)
        if pool is None:
            _PAR_STATE.clear()
            return None
        try:
            return pool.map(fn, tasks)
        finally:
            pool.close()
            pool.join()
            _PAR_STATE.clear()

    built = None
    if use_pool:
        built = _run_parallel({"items": items, "params": params}, _par_build, table_ids)
    if built is not None:
        indexes.update(built)
    else:
        for tid in table_ids:
            indexes[tid] = make_index(items[tid], params.ann, params.exact_threshold)

    answered = None
    if use_pool and built is not None:
        answered = _run_parallel(
            {"indexes": indexes, "mats": mats, "pos": pos, "params": params},
            _par_direction,
            directions,
        )
    if answered is not None:
        for task, top, dist in answered:
            results[task] = (top, dist)
    else:
        for task in directions:
            qt, it = task
            results[task] = _top1_against(
                indexes[it], mats[qt], pos[it], params.ann.ef_search
            )

    pairs: list[MatchPair] = []
    for ia, ta in enumerate(table_ids):
        for tb in table_ids[ia + 1 :]:
            top_ab, dist_ab = results[(ta, tb)]
            top_ba, _ = results[(tb, ta)]
            pairs.extend(
                _mutual_from_top1(refs[ta], refs[tb], top_ab, dist_ab, top_ba, params.threshold)
            )
    return pairs


def transitive_merge(pairs: list[MatchPair], universe: list[EntityRef] | None = None) -> list[Cluster]:
    """Connected components of the pair graph; singleton components dropped.

    ``universe`` may list every known record; records without any pair stay
    out of the result either way, matching the cross-table tuple reading.
    """
    endpoint_set: set[EntityRef] = set()
    for p in pairs:
        endpoint_set.add(p.a)
        endpoint_set.add(p.b)
    nodes = sorted(endpoint_set)
    idx = {ref: i for i, ref in enumerate(nodes)}
    ds = DisjointSet(len(nodes))
    for p in pairs:
        ds.union(idx[p.a], idx[p.b])
    clusters = [
        make_cluster(nodes[i] for i in comp)
        for comp in ds.components()
        if len(comp) >= 2
    ]
    clusters.sort(key=lambda c: min(c.members))
    return clusters


def run_matching(
    embeddings: dict[EntityRef, np.ndarray],
    dataset: Dataset,
    params: MatchParams | None = None,
) -> list[Cluster]:
    """Full pre-matching stage: pairs over all table pairs, then merge."""
    return transitive_merge(collect_pairs(embeddings, dataset, params), dataset.all_refs())


def bfs_components(pairs: list[MatchPair]) -> list[Cluster]:
    """Breadth-first-search connected components; independent check for
    ``transitive_merge``."""
    adj: dict[EntityRef, list[EntityRef]] = {}
    for p in pairs:
        adj.setdefault(p.a, []).append(p.b)
        adj.setdefault(p.b, []).append(p.a)
    seen: set[EntityRef] = set()
    out = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = []
        queue = deque([start])
        seen.add(start)
        while queue:
            node = queue.popleft()
            comp.append(node)
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    queue.append(nb)
        if len(comp) >= 2:
            out.append(make_cluster(comp))
    out.sort(key=lambda c: min(c.members))
    return out


def write_pairs_csv(pairs: list[MatchPair], path: Path | str) -> None:
    ordered = sorted(pairs, key=lambda p: (p.a, p.b))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["a_table", "a_row", "b_table", "b_row", "distance"])
        for p in ordered:
            writer.writerow(
                [p.a.table_id, p.a.row_index, p.b.table_id, p.b.row_index, repr(p.distance)]
            )


def read_pairs_csv(path: Path | str) -> list[MatchPair]:
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for at, ar, bt, br, d in reader:
            pairs.append(
                MatchPair(EntityRef(int(at), int(ar)), EntityRef(int(bt), int(br)), float(d))
            )
    return pairs
