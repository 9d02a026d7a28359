import math
from collections import Counter

import pytest
from scipy import stats

from tablematch.coordination import apply_rules, coordinate
from tablematch.synth import COLUMNS, CorruptionSpec, SynthSpec, generate
from tablematch.tables import EntityRef, load_dataset, write_dataset


class TestGenerate:
    def test_zero_corruption_full_presence_tables_identical(self):
        ds = generate(SynthSpec(n_tables=3, n_entities=20, presence_prob=1.0, seed=1))
        cell_sets = [
            {tuple(r.values) for r in t.rows} for t in ds.tables
        ]
        assert cell_sets[0] == cell_sets[1] == cell_sets[2]
        assert len(ds.ground_truth) == 20

    def test_deterministic_under_seed(self, tmp_path):
        spec = SynthSpec(
            n_tables=4,
            n_entities=30,
            presence_prob=0.8,
            corruption=CorruptionSpec(0.05, 0.3, 0.3),
            confusion_rate=0.2,
            seed=42,
        )
        write_dataset(generate(spec), tmp_path / "a")
        write_dataset(generate(spec), tmp_path / "b")
        for name in sorted(p.name for p in (tmp_path / "a").iterdir()):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_ground_truth_members_exist_and_disjoint(self):
        ds = generate(SynthSpec(n_tables=4, n_entities=50, presence_prob=0.6, seed=3))
        seen = set()
        for cluster in ds.ground_truth:
            assert len(cluster) >= 2
            for ref in cluster.members:
                assert ds.has_ref(ref)
                assert ref not in seen
                seen.add(ref)

    def test_cluster_sizes_follow_truncated_binomial(self):
        # aggregate size histogram over 200 seeds against Binomial(4, 0.8)
        # restricted to >= 2, chi-square goodness of fit
        n_tables, presence, n_entities = 4, 0.8, 50
        observed = Counter()
        for seed in range(200):
            ds = generate(
                SynthSpec(n_tables=n_tables, n_entities=n_entities, presence_prob=presence, seed=seed)
            )
            for cluster in ds.ground_truth:
                observed[len(cluster)] += 1
        sizes = list(range(2, n_tables + 1))
        probs = [math.comb(n_tables, k) * presence**k * (1 - presence) ** (n_tables - k) for k in sizes]
        total = sum(observed.values())
        expected = [p / sum(probs) * total for p in probs]
        chi2, pvalue = stats.chisquare([observed[s] for s in sizes], expected)
        assert pvalue > 0.001, f"chi2={chi2:.2f} p={pvalue:.5f} observed={dict(observed)}"

    def test_canonical_records_are_rule_fixed_points(self):
        ds = generate(SynthSpec(n_tables=2, n_entities=40, presence_prob=1.0, seed=5))
        coordinated = coordinate(ds, "rules_only")
        from tablematch.coordination import passthrough

        raw = passthrough(ds)
        assert coordinated.texts == raw.texts

    def test_corrupted_cells_normalize_back_to_canonical(self):
        clean = generate(SynthSpec(n_tables=3, n_entities=30, presence_prob=1.0, seed=9))
        mangled = generate(
            SynthSpec(
                n_tables=3,
                n_entities=30,
                presence_prob=1.0,
                corruption=CorruptionSpec(typo_rate=0.0, unit_mangle_rate=1.0, time_format_rate=1.0),
                seed=9,
            )
        )
        tid_col = COLUMNS.index("tid")
        canonical = {
            r.values[tid_col]: r.values for r in clean.tables[0].rows
        }
        for table in mangled.tables:
            for rec in table.rows:
                row_text = " | ".join(
                    f"{c}: {v}" for c, v in zip(COLUMNS, rec.values) if c != "tid" and v
                )
                normalized = apply_rules(row_text)
                want = " | ".join(
                    f"{c}: {v}"
                    for c, v in zip(COLUMNS, canonical[rec.values[tid_col]])
                    if c != "tid" and v
                )
                assert normalized == want

    def test_confusion_records_are_not_in_ground_truth(self):
        spec = SynthSpec(n_tables=4, n_entities=40, presence_prob=0.7, confusion_rate=1.0, seed=11)
        ds = generate(spec)
        tid_col = COLUMNS.index("tid")
        confused = {
            EntityRef(t.table_id, r.row_index)
            for t in ds.tables
            for r in t.rows
            if int(r.values[tid_col]) >= spec.n_entities
        }
        assert confused  # plenty at rate 1.0
        truth_members = {ref for c in ds.ground_truth for ref in c.members}
        assert not (confused & truth_members)

    def test_roundtrips_through_dataset_files(self, tmp_path):
        ds = generate(SynthSpec(n_tables=3, n_entities=15, presence_prob=0.9, seed=13))
        write_dataset(ds, tmp_path)
        back = load_dataset(tmp_path)
        assert [t.columns for t in back.tables] == [list(COLUMNS)] * 3
        assert {c.members for c in back.ground_truth} == {c.members for c in ds.ground_truth}

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"n_tables": 1},
            {"n_entities": 0},
            {"presence_prob": 1.5},
            {"confusion_rate": -0.1},
        ],
    )
    def test_spec_validation(self, kwargs):
        with pytest.raises(ValueError):
            SynthSpec(**kwargs)

    def test_corruption_validation(self):
        with pytest.raises(ValueError):
            CorruptionSpec(typo_rate=2.0)
