"""Approximate nearest-neighbor search over unit vectors.

``HnswIndex`` is a navigable small-world graph: every vector lives on
layer 0, and each node is promoted to higher layers with geometrically
decaying probability, giving long-range links for fast greedy descent.
Layer 0 allows up to 2M neighbors per node, upper layers M; neighbors are
selected as the closest candidates found during insertion (simple
heuristic). Returned distances are always exact cosine distances of the
candidates the graph visited; approximation only affects which
candidates are seen.

``ExactIndex`` is the brute-force twin with the same search interface;
``make_index`` picks it automatically for small tables, where exact is
both faster and removes approximation from results.
"""

from __future__ import annotations

import heapq
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .tables import EntityRef

# Below this many rows a linear scan beats graph search and is exact.
EXACT_FALLBACK_MAX_ROWS = 512

# Frontier candidates expanded together in one layer-search step.
_EXPAND_BATCH = 8

_SNAPSHOT_MAGIC = b"TMANN"
_SNAPSHOT_VERSION = 1


class AnnError(ValueError):
    pass


@dataclass(frozen=True)
class HnswParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.m < 2:
            raise AnnError("m must be >= 2")
        if self.ef_construction < self.m:
            raise AnnError("ef_construction must be >= m")
        if self.ef_search < 1:
            raise AnnError("ef_search must be >= 1")

    @property
    def level_lambda(self) -> float:
        return 1.0 / math.log(self.m)


class ExactIndex:
    """Linear-scan index; ties broken by smallest EntityRef."""

    def __init__(self, items: list[tuple[EntityRef, np.ndarray]]):
        if not items:
            raise AnnError("cannot build an index from zero items")
        self.keys = [ref for ref, _ in items]
        self._vecs = np.ascontiguousarray(
            np.stack([vec for _, vec in items]), dtype=np.float32
        )
        self._tables = np.array([r.table_id for r in self.keys])
        self._rows = np.array([r.row_index for r in self.keys])

    def __len__(self) -> int:
        return len(self.keys)

    def search(self, query: np.ndarray, k: int, ef: int | None = None) -> list[tuple[EntityRef, float]]:
        if k < 1:
            raise AnnError("k must be >= 1")
        dists = 1.0 - self._vecs @ np.asarray(query, dtype=np.float32)
        order = np.lexsort((self._rows, self._tables, dists))[:k]
        return [(self.keys[i], max(float(dists[i]), 0.0)) for i in order]


def exact_search(
    items: list[tuple[EntityRef, np.ndarray]], query: np.ndarray, k: int
) -> list[tuple[EntityRef, float]]:
    """Brute-force top-k by cosine distance; the oracle for graph search."""
    return ExactIndex(items).search(query, k)


class HnswIndex:
    def __init__(self, dim: int, params: HnswParams):
        self.dim = dim
        self.params = params
        self.keys: list[EntityRef] = []
        self._count = 0
        self._cap = 256
        self._vecs = np.zeros((self._cap, dim), dtype=np.float32)
        self._m0 = 2 * params.m
        # Layer-0 adjacency as a flat int32 matrix for cheap row slicing.
        self._links0 = np.zeros((self._cap, self._m0), dtype=np.int32)
        self._deg0 = np.zeros(self._cap, dtype=np.int32)
        self._levels: list[int] = []
        # Sparse upper layers: node id -> [neighbors at level 1, level 2, ...]
        self._upper: dict[int, list[list[int]]] = {}
        self._entry = -1
        self._max_level = -1
        self._prune_buf = np.empty(self._m0 + 1, dtype=np.int32)
        self._arange_m0 = np.arange(self._m0)
        self._rng = np.random.Generator(np.random.PCG64(params.seed))
        # Distance computations performed, for complexity instrumentation.
        self.distance_computations = 0

    def __len__(self) -> int:
        return self._count

    def _grow(self, needed: int) -> None:
        if needed <= self._cap:
            return
        new_cap = max(int(self._cap * 1.5), needed)
        for name in ("_vecs", "_links0", "_deg0"):
            old = getattr(self, name)
            grown = np.zeros((new_cap,) + old.shape[1:], dtype=old.dtype)
            grown[: self._cap] = old
            setattr(self, name, grown)
        self._cap = new_cap

    def _draw_level(self) -> int:
        u = 1.0 - self._rng.random()  # in (0, 1], avoids log(0)
        return int(-math.log(u) * self.params.level_lambda)

    def _greedy_descend(self, query: np.ndarray, entry: int, level: int) -> tuple[float, int]:
        """ef=1 layer search: walk to a local distance minimum."""
        vecs = self._vecs
        upper = self._upper
        links0 = self._links0
        deg0 = self._deg0
        node = entry
        d = 1.0 - float(vecs[node] @ query)
        n_dists = 1
        improved = True
        while improved:
            improved = False
            if level == 0:
                nbrs = links0[node, : deg0[node]].tolist()
            else:
                layers = upper.get(node)
                nbrs = layers[level - 1] if layers and level <= len(layers) else []
            if not nbrs:
                break
            nd = 1.0 - vecs[nbrs] @ query
            n_dists += len(nbrs)
            j = int(np.argmin(nd))
            if nd[j] < d:
                d = float(nd[j])
                node = nbrs[j]
                improved = True
        self.distance_computations += n_dists
        return d, node

    def _search_layer(
        self, query: np.ndarray, entries: list[int], level: int, ef: int
    ) -> list[tuple[float, int]]:
        """Best-first search on one layer; returns (dist, node) ascending.

        Expands up to ``_EXPAND_BATCH`` frontier candidates per step so
        neighbor distances amortize into one matrix product. Candidates
        already farther than the worst retained result are discarded, which
        mirrors the one-at-a-time termination rule.
        """
        vecs = self._vecs
        links0 = self._links0
        deg0 = self._deg0
        heappush, heappop = heapq.heappush, heapq.heappop
        visited = np.zeros(self._count, dtype=bool)
        visited[entries] = True
        d0 = 1.0 - vecs[entries] @ query
        n_dists = len(entries)
        cand = list(zip(d0.tolist(), entries))
        heapq.heapify(cand)
        best = [(-d, n) for d, n in cand]
        heapq.heapify(best)
        col_idx = self._arange_m0
        while cand:
            full = len(best) >= ef
            worst = -best[0][0]
            if full and cand[0][0] > worst:
                break
            nodes = []
            while cand and len(nodes) < _EXPAND_BATCH:
                d, n = heappop(cand)
                if full and d > worst:
                    continue
                nodes.append(n)
            if not nodes:
                continue
            if level == 0:
                rows = links0[nodes]
                flat = rows[col_idx < deg0[nodes][:, None]]
            else:
                merged: list[int] = []
                for n in nodes:
                    layers = self._upper.get(n)
                    if layers and level <= len(layers):
                        merged.extend(layers[level - 1])
                flat = np.asarray(merged, dtype=np.int32)
            if flat.size == 0:
                continue
            flat = np.unique(flat)
            unv = flat[~visited[flat]]
            if unv.size == 0:
                continue
            visited[unv] = True
            nd = 1.0 - vecs[unv] @ query
            n_dists += unv.size
            if len(best) >= ef:
                keep = nd < -best[0][0]
                nd, unv = nd[keep], unv[keep]
            for dist, nb in zip(nd.tolist(), unv.tolist()):
                if len(best) < ef:
                    heappush(cand, (dist, nb))
                    heappush(best, (-dist, nb))
                elif dist < -best[0][0]:
                    heappush(cand, (dist, nb))
                    heappush(best, (-dist, nb))
                    heappop(best)
        self.distance_computations += n_dists
        return sorted((-d, n) for d, n in best)

    def add(self, key: EntityRef, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float32)
        if vec.shape != (self.dim,):
            raise AnnError(f"vector for {key} has shape {vec.shape}, expected ({self.dim},)")
        node = self._count
        self._grow(node + 1)
        self._vecs[node] = vec
        self.keys.append(key)
        self._count += 1
        level = self._draw_level()
        self._levels.append(level)
        if level > 0:
            self._upper[node] = [[] for _ in range(level)]

        if self._entry < 0:
            self._entry = node
            self._max_level = level
            return

        start = self._entry
        for lv in range(self._max_level, level, -1):
            _, start = self._greedy_descend(vec, start, lv)
        entries = [start]

        m = self.params.m
        for lv in range(min(level, self._max_level), -1, -1):
            found = self._search_layer(vec, entries, lv, self.params.ef_construction)
            # closest-m selection at every level; the 2m layer-0 cap only
            # bounds what back-links may accumulate later
            chosen = [n for _, n in found[:m]]
            if lv == 0:
                self._links0[node, : len(chosen)] = chosen
                self._deg0[node] = len(chosen)
                buf = self._prune_buf
                for nb in chosen:
                    deg = self._deg0[nb]
                    if deg < self._m0:
                        self._links0[nb, deg] = node
                        self._deg0[nb] = deg + 1
                    else:
                        buf[:deg] = self._links0[nb, :deg]
                        buf[deg] = node
                        d = 1.0 - self._vecs[buf] @ self._vecs[nb]
                        self.distance_computations += len(buf)
                        keep = np.argsort(d, kind="stable")[: self._m0]
                        self._links0[nb, : self._m0] = buf[keep]
            else:
                self._upper[node][lv - 1] = chosen
                for nb in chosen:
                    lst = self._upper[nb][lv - 1]
                    lst.append(node)
                    if len(lst) > m:
                        d = 1.0 - self._vecs[lst] @ self._vecs[nb]
                        self.distance_computations += len(lst)
                        order = np.argsort(d, kind="stable")[:m]
                        self._upper[nb][lv - 1] = [lst[i] for i in order]
            entries = [n for _, n in found]

        if level > self._max_level:
            self._entry = node
            self._max_level = level

    def search(self, query: np.ndarray, k: int, ef: int | None = None) -> list[tuple[EntityRef, float]]:
        """Top-k by cosine distance, ascending; ``ef`` controls search effort."""
        if self._count == 0:
            raise AnnError("cannot search an empty index")
        if k < 1:
            raise AnnError("k must be >= 1")
        ef = max(ef if ef is not None else self.params.ef_search, k)
        query = np.asarray(query, dtype=np.float32)
        if query.shape != (self.dim,):
            raise AnnError(f"query has shape {query.shape}, expected ({self.dim},)")
        start = self._entry
        for lv in range(self._max_level, 0, -1):
            _, start = self._greedy_descend(query, start, lv)
        found = self._search_layer(query, [start], 0, ef)[:k]
        return [(self.keys[n], max(d, 0.0)) for d, n in found]

    def save(self, path: Path | str) -> None:
        """Binary snapshot: versioned header, little-endian vectors, adjacency."""
        with open(path, "wb") as fh:
            fh.write(_SNAPSHOT_MAGIC)
            fh.write(
                struct.pack(
                    "<IIIIiiII",
                    _SNAPSHOT_VERSION,
                    self._count,
                    self.dim,
                    self.params.m,
                    self._entry,
                    self._max_level,
                    self.params.ef_construction,
                    self.params.ef_search,
                )
            )
            fh.write(struct.pack("<i", self.params.seed))
            for ref in self.keys:
                fh.write(struct.pack("<ii", ref.table_id, ref.row_index))
            fh.write(np.ascontiguousarray(self._vecs[: self._count]).astype("<f4").tobytes())
            fh.write(np.asarray(self._levels, dtype="<i4").tobytes())
            fh.write(self._deg0[: self._count].astype("<i4").tobytes())
            fh.write(self._links0[: self._count].astype("<i4").tobytes())
            for node in range(self._count):
                for lv in range(1, self._levels[node] + 1):
                    nbrs = self._upper[node][lv - 1]
                    fh.write(struct.pack("<I", len(nbrs)))
                    fh.write(np.asarray(nbrs, dtype="<i4").tobytes())

    @classmethod
    def load(cls, path: Path | str) -> "HnswIndex":
        with open(path, "rb") as fh:
            magic = fh.read(len(_SNAPSHOT_MAGIC))
            if magic != _SNAPSHOT_MAGIC:
                raise AnnError(f"{path}: not an index snapshot")
            version, count, dim, m, entry, max_level, ef_c, ef_s = struct.unpack(
                "<IIIIiiII", fh.read(32)
            )
            if version != _SNAPSHOT_VERSION:
                raise AnnError(f"{path}: unsupported snapshot version {version}")
            (seed,) = struct.unpack("<i", fh.read(4))
            params = HnswParams(m=m, ef_construction=ef_c, ef_search=ef_s, seed=seed)
            index = cls(dim, params)
            index._grow(count)
            index._count = count
            index._entry = entry
            index._max_level = max_level
            for _ in range(count):
                tid, rix = struct.unpack("<ii", fh.read(8))
                index.keys.append(EntityRef(tid, rix))
            vec_bytes = fh.read(count * dim * 4)
            index._vecs[:count] = np.frombuffer(vec_bytes, dtype="<f4").reshape(count, dim)
            index._levels = list(np.frombuffer(fh.read(count * 4), dtype="<i4"))
            index._deg0[:count] = np.frombuffer(fh.read(count * 4), dtype="<i4")
            m0 = 2 * m
            links = np.frombuffer(fh.read(count * m0 * 4), dtype="<i4").reshape(count, m0)
            index._links0[:count] = links
            for node in range(count):
                if index._levels[node] > 0:
                    layers = []
                    for _ in range(index._levels[node]):
                        (n_nbrs,) = struct.unpack("<I", fh.read(4))
                        layers.append(list(np.frombuffer(fh.read(n_nbrs * 4), dtype="<i4")))
                    index._upper[node] = layers
        return index


def build_index(
    items: list[tuple[EntityRef, np.ndarray]], params: HnswParams | None = None
) -> HnswIndex:
    """Build a graph index by inserting items in order; deterministic under seed."""
    params = params or HnswParams()
    if not items:
        raise AnnError("cannot build an index from zero items")
    dim = len(items[0][1])
    index = HnswIndex(dim, params)
    for ref, vec in items:
        index.add(ref, vec)
    return index


def make_index(
    items: list[tuple[EntityRef, np.ndarray]],
    params: HnswParams | None = None,
    exact_threshold: int = EXACT_FALLBACK_MAX_ROWS,
):
    """Graph index for large item sets, exact scan below ``exact_threshold`` rows."""
    if len(items) < exact_threshold:
        return ExactIndex(items)
    return build_index(items, params)
