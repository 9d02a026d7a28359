"""Synthetic multi-source datasets with planted ground truth.

Every planted entity has one canonical record whose cells are already in
the normalized form the rule engine produces, so an uncorrupted dataset
is a fixed point of rule coordination. Corruption then rewrites cells
into the alternate representations the rules know how to undo (unit and
format flips) plus character typos, which they do not.

``confusion_rate`` plants look-alike entities: a near-copy of some
entity's record dropped into one table where that entity is absent. Such
a record is its own (singleton) entity in the ground truth, but its text
sits close enough to the original cluster to get merged by nearest-
neighbor matching, which is exactly the situation density pruning is
meant to clean up.
"""

from __future__ import annotations

import random
import string
from dataclasses import dataclass, field

from .tables import Dataset, EntityRef, Record, SourceTable, make_cluster

COLUMNS = ["tid", "title", "artist", "number", "length", "year", "language", "weight", "capacity"]

_ADJECTIVES = [
    "Silver", "Crimson", "Golden", "Electric", "Midnight", "Turbo", "Quiet",
    "Lunar", "Rapid", "Vintage", "Coastal", "Atomic", "Velvet", "Solar",
    "Arctic", "Neon", "Hollow", "Amber", "Iron", "Misty",
]
_NOUNS = [
    "Horizon", "Echo", "Voyager", "Cascade", "Ember", "Signal", "Harbor",
    "Prism", "Meadow", "Falcon", "Canyon", "Drift", "Beacon", "Summit",
    "Mirage", "Current", "Lantern", "Orchid", "Thunder", "Compass",
]
_FIRST_NAMES = [
    "Alma", "Bruno", "Carla", "Derek", "Elena", "Felix", "Greta", "Hugo",
    "Irene", "Jonas", "Karla", "Liam", "Mira", "Nadia", "Oscar", "Petra",
]
_LAST_NAMES = [
    "Moreno", "Keller", "Ivanov", "Tanaka", "Silva", "Novak", "Berg",
    "Castillo", "Fontaine", "Okafor", "Lindqvist", "Marsh", "Petrov", "Quinn",
]
_LANGUAGES = ["English", "French", "German", "Spanish", "Italian", "Portuguese"]
_LANG_ABBREV = {
    "English": ["En", "Eng"],
    "French": ["Fr"],
    "German": ["De", "Ger"],
    "Spanish": ["Es", "Sp"],
    "Italian": ["It"],
    "Portuguese": ["Pt"],
}
_ORDINAL_SUFFIX = {1: "st", 2: "nd", 3: "rd"}


@dataclass
class CorruptionSpec:
    typo_rate: float = 0.0
    unit_mangle_rate: float = 0.0
    time_format_rate: float = 0.0

    def __post_init__(self):
        for name in ("typo_rate", "unit_mangle_rate", "time_format_rate"):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ValueError(f"{name} must be in [0, 1]")


@dataclass
class SynthSpec:
    n_tables: int = 4
    n_entities: int = 100
    presence_prob: float = 0.9
    corruption: CorruptionSpec = field(default_factory=CorruptionSpec)
    confusion_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_tables < 2:
            raise ValueError("n_tables must be >= 2")
        if self.n_entities < 1:
            raise ValueError("n_entities must be >= 1")
        if not 0 <= self.presence_prob <= 1:
            raise ValueError("presence_prob must be in [0, 1]")
        if not 0 <= self.confusion_rate <= 1:
            raise ValueError("confusion_rate must be in [0, 1]")


def _ordinal(n: int) -> str:
    if 10 <= n % 100 <= 13:
        return f"{n}th"
    return f"{n}{_ORDINAL_SUFFIX.get(n % 10, 'th')}"


def _canonical_entity(rng: random.Random, idx: int) -> dict[str, str]:
    seconds = rng.randrange(61, 600)
    weight = rng.randrange(50, 2000)
    liters = rng.randrange(1, 40) / 10
    return {
        "tid": str(idx),
        "title": (
            f"{rng.choice(_ADJECTIVES)} {rng.choice(_NOUNS)} "
            f"{rng.choice(_ADJECTIVES)} {idx:04d}"
        ),
        "artist": f"{rng.choice(_FIRST_NAMES)} {rng.choice(_LAST_NAMES)}",
        "number": _ordinal(rng.randrange(1, 30)),
        "length": f"{seconds}sec",
        "year": str(rng.randrange(1930, 2030)),
        "language": rng.choice(_LANGUAGES),
        "weight": f"{weight}g",
        "capacity": f"{liters:g}L",
    }


def _typo(rng: random.Random, text: str, rate: float) -> str:
    if rate <= 0:
        return text
    chars = list(text)
    for i, ch in enumerate(chars):
        if ch != " " and rng.random() < rate:
            chars[i] = rng.choice(string.ascii_lowercase)
    return "".join(chars)


def _mangle_units(rng: random.Random, cells: dict[str, str], rate: float) -> None:
    """Flip normalized cells into the alternate representations rules undo."""
    if rate <= 0:
        return
    if rng.random() < rate:
        grams = int(cells["weight"].removesuffix("g"))
        if rng.random() < 0.5:
            cells["weight"] = f"{grams / 1000:g}kg"
        else:
            cells["weight"] = f"{grams * 1000}mg"
    if rng.random() < rate:
        liters = float(cells["capacity"].removesuffix("L"))
        if rng.random() < 0.5:
            cells["capacity"] = f"{round(liters * 1000):d}ml"
        else:
            cells["capacity"] = f"{round(liters * 100):d}cl"
    if rng.random() < rate:
        cells["year"] = cells["year"][-2:]
    if rng.random() < rate:
        cells["language"] = rng.choice(_LANG_ABBREV[cells["language"]])
    if rng.random() < rate:
        ordinal = cells["number"]
        digits = ordinal[:-2]
        cells["number"] = digits.zfill(2) if rng.random() < 0.5 else digits


def _mangle_time(rng: random.Random, cells: dict[str, str], rate: float) -> None:
    if rate <= 0 or rng.random() >= rate:
        return
    seconds = int(cells["length"].removesuffix("sec"))
    form = rng.randrange(3)
    if form == 0:
        cells["length"] = f"{seconds // 60:02d}:{seconds % 60:02d}"
    elif form == 1:
        cells["length"] = str(seconds * 1000)
    else:
        cells["length"] = f"{seconds / 60:.4f}"


def _confused_cells(rng: random.Random, entity: dict[str, str], tid: str) -> dict[str, str]:
    """A look-alike of a different real-world entity: same artist, lightly
    mutated title, fresh numeric attributes. Close enough to be merged by
    nearest-neighbor matching, far enough to sit outside a tight density
    neighborhood."""
    chars = list(entity["title"])
    n_edits = max(2, round(len(chars) * 0.15))
    for i in rng.sample(range(len(chars)), min(n_edits, len(chars))):
        if chars[i] != " ":
            chars[i] = rng.choice(string.ascii_lowercase)
    fresh = _canonical_entity(rng, int(tid))
    return {
        "tid": tid,
        "title": "".join(chars),
        "artist": entity["artist"],
        "number": fresh["number"],
        "length": fresh["length"],
        "year": fresh["year"],
        "language": fresh["language"],
        "weight": fresh["weight"],
        "capacity": fresh["capacity"],
    }


def generate(spec: SynthSpec) -> Dataset:
    """Materialize the spec into a dataset with ground-truth clusters.

    Each entity lands in each table with ``presence_prob``; corruption is
    applied per materialized record; ground truth keeps only entities
    present in at least two tables. Pure in ``spec`` (seed included).
    """
    rng = random.Random(spec.seed)
    entities = [_canonical_entity(rng, i) for i in range(spec.n_entities)]

    table_rows: list[list[tuple[int, dict[str, str]]]] = [[] for _ in range(spec.n_tables)]
    presence: list[list[int]] = []
    for idx, entity in enumerate(entities):
        tables_in = [t for t in range(spec.n_tables) if rng.random() < spec.presence_prob]
        presence.append(tables_in)
        for t in tables_in:
            cells = dict(entity)
            _mangle_units(rng, cells, spec.corruption.unit_mangle_rate)
            _mangle_time(rng, cells, spec.corruption.time_format_rate)
            cells["title"] = _typo(rng, cells["title"], spec.corruption.typo_rate)
            cells["artist"] = _typo(rng, cells["artist"], spec.corruption.typo_rate)
            table_rows[t].append((idx, cells))

    next_entity_id = spec.n_entities
    for idx, entity in enumerate(entities):
        if rng.random() >= spec.confusion_rate:
            continue
        absent = [t for t in range(spec.n_tables) if t not in presence[idx]]
        if not absent:
            continue
        target = rng.choice(absent)
        cells = _confused_cells(rng, entity, str(next_entity_id))
        next_entity_id += 1
        table_rows[target].append((-1, cells))  # own singleton entity, no cluster

    tables = []
    members: dict[int, list[EntityRef]] = {}
    for t in range(spec.n_tables):
        rows = table_rows[t]
        rng.shuffle(rows)
        records = []
        for row_index, (entity_idx, cells) in enumerate(rows):
            records.append(Record(values=[cells[c] for c in COLUMNS], row_index=row_index))
            if entity_idx >= 0:
                members.setdefault(entity_idx, []).append(EntityRef(t, row_index))
        tables.append(
            SourceTable(table_id=t, name=f"table_{t:02d}", columns=list(COLUMNS), rows=records)
        )

    ground_truth = [
        make_cluster(refs) for _, refs in sorted(members.items()) if len(refs) >= 2
    ]
    return Dataset(tables=tables, ground_truth=ground_truth)
