"""Data model and CSV ingestion for multi-table matching.

A dataset is a set of n >= 2 source tables, each loaded from one CSV file
with a header row. Records are addressed globally by (table_id, row_index).
Ground-truth clusters, when present, live in a separate CSV with columns
(cluster_id, table_id, row_index).
"""

from __future__ import annotations

import csv
import math
import random
from dataclasses import dataclass
from pathlib import Path

SERIALIZE_SEP = " | "
KEY_COLUMN = "tid"


class IngestError(ValueError):
    """Raised when a dataset directory or one of its files is malformed."""


@dataclass(frozen=True, order=True)
class EntityRef:
    """Global address of one record: (table_id, row_index), ordered lexicographically."""

    table_id: int
    row_index: int


@dataclass
class Record:
    """One row of one source table. Missing cells are empty strings."""

    values: list[str]
    row_index: int


@dataclass
class SourceTable:
    table_id: int
    name: str
    columns: list[str]
    rows: list[Record]

    def __post_init__(self):
        for rec in self.rows:
            if len(rec.values) != len(self.columns):
                raise IngestError(
                    f"table {self.name!r} row {rec.row_index}: "
                    f"expected {len(self.columns)} values, got {len(rec.values)}"
                )

    def __len__(self) -> int:
        return len(self.rows)


@dataclass(frozen=True)
class Cluster:
    """A set of records believed to denote one real-world entity."""

    members: frozenset[EntityRef]

    def __post_init__(self):
        if not self.members:
            raise ValueError("cluster must have at least one member")

    def __len__(self) -> int:
        return len(self.members)

    def sorted_members(self) -> list[EntityRef]:
        return sorted(self.members)


def make_cluster(refs) -> Cluster:
    return Cluster(frozenset(refs))


@dataclass
class Dataset:
    tables: list[SourceTable]
    ground_truth: list[Cluster] | None = None

    def __post_init__(self):
        if len(self.tables) < 2:
            raise IngestError(f"need >=2 tables, got {len(self.tables)}")
        seen = set()
        for t in self.tables:
            if t.table_id in seen:
                raise IngestError(f"duplicate table_id {t.table_id}")
            seen.add(t.table_id)
        if self.ground_truth is not None:
            validate_disjoint(self.ground_truth, context="ground truth")
            for c in self.ground_truth:
                for ref in c.members:
                    if not self.has_ref(ref):
                        raise IngestError(f"ground-truth ref {ref} does not exist")

    def has_ref(self, ref: EntityRef) -> bool:
        return 0 <= ref.table_id < len(self.tables) and 0 <= ref.row_index < len(
            self.tables[ref.table_id]
        )

    def table(self, table_id: int) -> SourceTable:
        return self.tables[table_id]

    def record(self, ref: EntityRef) -> Record:
        return self.tables[ref.table_id].rows[ref.row_index]

    def all_refs(self) -> list[EntityRef]:
        return [
            EntityRef(t.table_id, r.row_index) for t in self.tables for r in t.rows
        ]

    def total_records(self) -> int:
        return sum(len(t) for t in self.tables)


def validate_disjoint(clusters: list[Cluster], context: str = "clusters") -> None:
    seen: dict[EntityRef, int] = {}
    for i, c in enumerate(clusters):
        for ref in c.members:
            if ref in seen:
                raise IngestError(
                    f"{context}: {ref} appears in cluster {seen[ref]} and cluster {i}"
                )
            seen[ref] = i


@dataclass
class IngestConfig:
    """Controls how a dataset directory is read.

    ``truth_file`` names the ground-truth CSV inside the directory; it is
    excluded from the table list. All other ``*.csv`` files become source
    tables, in sorted filename order.
    """

    truth_file: str = "ground_truth.csv"
    encoding: str = "utf-8"


def _read_table_csv(path: Path, table_id: int, encoding: str) -> SourceTable:
    with open(path, newline="", encoding=encoding) as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise IngestError(f"{path}: empty file, expected a header row") from None
        rows = []
        for i, raw in enumerate(reader):
            if len(raw) != len(header):
                raise IngestError(
                    f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(raw)}"
                )
            rows.append(Record(values=raw, row_index=i))
    return SourceTable(table_id=table_id, name=path.stem, columns=header, rows=rows)


def read_clusters_csv(path: Path | str, encoding: str = "utf-8") -> list[Cluster]:
    """Read a cluster file: CSV with header (cluster_id, table_id, row_index)."""
    path = Path(path)
    groups: dict[str, set[EntityRef]] = {}
    with open(path, newline="", encoding=encoding) as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header[:3]] != [
            "cluster_id",
            "table_id",
            "row_index",
        ]:
            raise IngestError(
                f"{path}: expected header 'cluster_id,table_id,row_index', got {header}"
            )
        for raw in reader:
            if len(raw) != 3:
                raise IngestError(
                    f"{path}:{reader.line_num}: expected 3 fields, got {len(raw)}"
                )
            cid, tid, rix = raw
            try:
                ref = EntityRef(int(tid), int(rix))
            except ValueError:
                raise IngestError(f"{path}:{reader.line_num}: non-integer ref {raw!r}") from None
            groups.setdefault(cid, set()).add(ref)
    # File order of first appearance keeps output deterministic.
    return [make_cluster(refs) for refs in groups.values()]


def write_clusters_csv(clusters: list[Cluster], path: Path | str) -> None:
    """Write clusters in the same format ``read_clusters_csv`` accepts.

    Clusters are sorted by their smallest member and members sorted within,
    so identical cluster sets always produce byte-identical files.
    """
    ordered = sorted(clusters, key=lambda c: min(c.members))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "table_id", "row_index"])
        for cid, cluster in enumerate(ordered):
            for ref in cluster.sorted_members():
                writer.writerow([cid, ref.table_id, ref.row_index])


def load_dataset(root_path: Path | str, config: IngestConfig | None = None) -> Dataset:
    """Load all CSV tables under ``root_path`` plus the optional ground-truth file.

    Tables are assigned ids in sorted filename order, so a directory always
    loads the same way. Raises :class:`IngestError` for a missing directory,
    fewer than two tables, a row with the wrong number of fields (the error
    names the file and line), or overlapping ground-truth clusters.
    """
    config = config or IngestConfig()
    root = Path(root_path)
    if not root.is_dir():
        raise IngestError(f"dataset directory not found: {root}")
    table_paths = sorted(
        p for p in root.glob("*.csv") if p.name != config.truth_file
    )
    if len(table_paths) < 2:
        raise IngestError(f"need >=2 tables, found {len(table_paths)} CSV files in {root}")
    tables = [
        _read_table_csv(p, i, config.encoding) for i, p in enumerate(table_paths)
    ]
    truth_path = root / config.truth_file
    ground_truth = read_clusters_csv(truth_path, config.encoding) if truth_path.exists() else None
    return Dataset(tables=tables, ground_truth=ground_truth)


def write_dataset(dataset: Dataset, root_path: Path | str) -> None:
    """Write a dataset to a directory in the format ``load_dataset`` reads.

    Table files are named ``table_00.csv`` .. so filename order matches
    table_id order on reload.
    """
    root = Path(root_path)
    root.mkdir(parents=True, exist_ok=True)
    for t in dataset.tables:
        with open(root / f"table_{t.table_id:02d}.csv", "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(t.columns)
            for rec in t.rows:
                writer.writerow(rec.values)
    if dataset.ground_truth is not None:
        write_clusters_csv(dataset.ground_truth, root / "ground_truth.csv")


def serialize_record(table: SourceTable, row_index: int) -> str:
    """Render one record as ``"col1: v1 | col2: v2"``.

    Empty cells are skipped, as is the natural-key column (``tid``): ids must
    never leak into the text used for matching. Output is deterministic.
    """
    if not 0 <= row_index < len(table.rows):
        raise IndexError(f"row_index {row_index} out of range for table {table.name!r}")
    rec = table.rows[row_index]
    parts = [
        f"{col}: {val}"
        for col, val in zip(table.columns, rec.values)
        if val != "" and col != KEY_COLUMN
    ]
    return SERIALIZE_SEP.join(parts)


def parse_serialized(text: str) -> list[tuple[str, str]] | None:
    """Invert ``serialize_record``: return (column, value) pairs, or None if
    the text does not follow the ``name: value | ...`` layout."""
    if not text:
        return []
    pairs = []
    for segment in text.split(SERIALIZE_SEP):
        col, sep, val = segment.partition(": ")
        if not sep or not col:
            return None
        pairs.append((col, val))
    return pairs


def sample_refs(dataset: Dataset, k: int, seed: int) -> list[EntityRef]:
    """Deterministic stratified sample of record addresses.

    Draws ceil(k/n) records per table (without replacement, seeded), then
    tops up from tables with spare rows if some tables were too small,
    truncating at k total.
    """
    total = dataset.total_records()
    if k > total:
        raise ValueError(f"cannot sample {k} records from {total}")
    if k <= 0:
        raise ValueError("k must be positive")
    rng = random.Random(seed)
    n = len(dataset.tables)
    quota = math.ceil(k / n)
    chosen: list[EntityRef] = []
    leftovers: list[list[int]] = []
    for t in dataset.tables:
        indices = list(range(len(t)))
        rng.shuffle(indices)
        take = min(quota, len(indices), k - len(chosen))
        chosen.extend(EntityRef(t.table_id, j) for j in indices[:take])
        leftovers.append(indices[take:])
    for t, rest in zip(dataset.tables, leftovers):
        while rest and len(chosen) < k:
            chosen.append(EntityRef(t.table_id, rest.pop(0)))
    return chosen[:k]


def sample_records(dataset: Dataset, k: int, seed: int) -> list[Record]:
    """Stratified pseudo-random record sample; pure in (dataset, k, seed)."""
    return [dataset.record(ref) for ref in sample_refs(dataset, k, seed)]


def sample_texts(dataset: Dataset, k: int, seed: int) -> list[str]:
    """Serialized form of ``sample_records``, for prompt construction."""
    return [
        serialize_record(dataset.table(ref.table_id), ref.row_index)
        for ref in sample_refs(dataset, k, seed)
    ]
