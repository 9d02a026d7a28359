import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tablematch.config import PipelineConfig
from tablematch.evaluate import EvalReport, SweepSpec, ablate, score, sweep
from tablematch.synth import CorruptionSpec, SynthSpec, generate
from tablematch.tables import EntityRef, make_cluster


def _cluster(*pairs):
    return make_cluster(EntityRef(t, r) for t, r in pairs)


class TestScore:
    def test_perfect_prediction(self):
        truth = [_cluster((0, 0), (1, 0)), _cluster((0, 1), (1, 1), (2, 0))]
        report = score(list(truth), truth)
        assert report.metrics() == (1.0, 1.0, 1.0)
        assert report.correct_count == 2

    def test_no_predictions_scores_zero(self):
        truth = [_cluster((0, 0), (1, 0))]
        report = score([], truth)
        assert report.metrics() == (0.0, 0.0, 0.0)

    def test_direct_formula(self):
        # 3 predicted, 2 exact matches, 4 truth clusters
        truth = [
            _cluster((0, 0), (1, 0)),
            _cluster((0, 1), (1, 1)),
            _cluster((0, 2), (1, 2)),
            _cluster((0, 3), (1, 3)),
        ]
        predicted = [truth[0], truth[1], _cluster((0, 9), (1, 9))]
        report = score(predicted, truth)
        assert report.precision == pytest.approx(2 / 3)
        assert report.recall == pytest.approx(1 / 2)
        assert report.f1 == pytest.approx(4 / 7)

    def test_superset_prediction_is_incorrect(self):
        truth = [_cluster((0, 0), (1, 0)), _cluster((0, 5), (1, 5))]
        predicted = [_cluster((0, 0), (1, 0), (2, 0))]
        assert score(predicted, truth).correct_count == 0

    def test_singleton_truth_excluded(self):
        truth = [_cluster((0, 0)), _cluster((0, 1), (1, 1))]
        report = score([_cluster((0, 1), (1, 1))], truth)
        assert report.truth_count == 1
        assert report.metrics() == (1.0, 1.0, 1.0)

    def test_empty_truth_rejected(self):
        with pytest.raises(ValueError, match="nothing to evaluate"):
            score([], [])
        with pytest.raises(ValueError, match="nothing to evaluate"):
            score([], [_cluster((0, 0))])  # singletons only

    def test_overlapping_predictions_rejected(self):
        truth = [_cluster((0, 0), (1, 0))]
        predicted = [_cluster((0, 0), (1, 0)), _cluster((0, 0), (2, 0))]
        with pytest.raises(Exception, match="appears in cluster"):
            score(predicted, truth)

    @given(st.data())
    @settings(max_examples=60)
    def test_permutation_invariant(self, data):
        size = data.draw(st.integers(2, 6))
        truth = [_cluster((0, i), (1, i)) for i in range(size)]
        predicted = [_cluster((0, i), (1, i)) for i in range(size - 1)] + [
            _cluster((0, 9), (1, 9))
        ]
        seed = data.draw(st.integers(0, 1000))
        rng = random.Random(seed)
        shuffled_t, shuffled_p = list(truth), list(predicted)
        rng.shuffle(shuffled_t)
        rng.shuffle(shuffled_p)
        assert score(predicted, truth).metrics() == score(shuffled_p, shuffled_t).metrics()

    @given(st.integers(1, 20), st.integers(0, 20), st.integers(0, 20))
    @settings(max_examples=100)
    def test_f1_identity_holds(self, truth_n, extra_pred, correct_n):
        correct = min(correct_n, truth_n)
        truth = [_cluster((0, i), (1, i)) for i in range(truth_n)]
        predicted = [_cluster((0, i), (1, i)) for i in range(correct)]
        predicted += [_cluster((5, i), (6, i)) for i in range(extra_pred)]
        report = score(predicted, truth)
        p, r = report.precision, report.recall
        expected = 2 * p * r / (p + r) if p + r else 0.0
        assert report.f1 == pytest.approx(expected, abs=1e-12)

    def test_predicted_singletons_count_as_wrong(self):
        # truth singletons are excluded, but a predicted singleton is still
        # a prediction and cannot match anything, so it costs precision
        truth = [_cluster((0, 0), (1, 0))]
        predicted = [_cluster((0, 0), (1, 0)), _cluster((2, 2))]
        report = score(predicted, truth)
        assert report.predicted_count == 2
        assert report.precision == pytest.approx(0.5)
        assert report.recall == 1.0

    def test_report_validates_f1(self):
        with pytest.raises(ValueError, match="inconsistent"):
            EvalReport(
                precision=1.0, recall=1.0, f1=0.5,
                predicted_count=1, truth_count=1, correct_count=1,
            )


@pytest.fixture(scope="module")
def corrupted_dataset():
    return generate(
        SynthSpec(
            n_tables=3,
            n_entities=60,
            presence_prob=0.85,
            corruption=CorruptionSpec(typo_rate=0.04, unit_mangle_rate=0.3, time_format_rate=0.3),
            seed=7,
        )
    )


class TestSweep:
    def test_single_value_sweep_equals_direct_run(self, corrupted_dataset):
        config = PipelineConfig(match_threshold=0.2)
        direct = ablate(corrupted_dataset, config, set())
        swept = sweep(corrupted_dataset, config, SweepSpec("lambda", [0.2]))
        assert len(swept) == 1
        assert swept[0][0] == 0.2
        assert swept[0][1].metrics() == direct.metrics()

    def test_d_single_value_matches_direct(self, corrupted_dataset):
        config = PipelineConfig(prune_radius=0.3)
        direct = ablate(corrupted_dataset, config, set())
        swept = sweep(corrupted_dataset, config, SweepSpec("d", [0.3]))
        assert swept[0][1].metrics() == direct.metrics()

    def test_d_equals_two_reproduces_no_pruning(self, corrupted_dataset):
        config = PipelineConfig()
        rows = sweep(corrupted_dataset, config, SweepSpec("d", [0.1, 2.0]))
        no_prune = ablate(corrupted_dataset, config, {"pruning"})
        at_two = rows[-1][1]
        assert at_two.metrics() == no_prune.metrics()
        assert (at_two.predicted_count, at_two.correct_count) == (
            no_prune.predicted_count,
            no_prune.correct_count,
        )

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SweepSpec("gamma", [0.1])
        with pytest.raises(ValueError):
            SweepSpec("lambda", [])
        with pytest.raises(ValueError):
            SweepSpec("lambda", [0.3, 0.1])


class TestAblate:
    def test_empty_disable_equals_full(self, corrupted_dataset):
        config = PipelineConfig()
        assert ablate(corrupted_dataset, config, set()).metrics() == ablate(
            corrupted_dataset, config, set()
        ).metrics()

    def test_no_pruning_on_clean_data_equal(self):
        clean = generate(SynthSpec(n_tables=3, n_entities=50, presence_prob=0.9, seed=13))
        config = PipelineConfig()
        full = ablate(clean, config, set())
        without = ablate(clean, config, {"pruning"})
        assert full.metrics() == without.metrics() == (1.0, 1.0, 1.0)

    def test_no_coordination_hurts_on_mangled_data(self):
        mangled = generate(
            SynthSpec(
                n_tables=4,
                n_entities=150,
                presence_prob=0.9,
                corruption=CorruptionSpec(unit_mangle_rate=0.5, time_format_rate=0.5),
                seed=17,
            )
        )
        config = PipelineConfig(match_threshold=0.12)
        full = ablate(mangled, config, set())
        without = ablate(mangled, config, {"coordination"})
        assert full.f1 > without.f1

    def test_disable_accepts_aliases_through_config(self):
        from tablematch.config import normalize_disable

        assert normalize_disable(["dpm"]) == frozenset({"pruning"})
        assert normalize_disable(["MPLAC"]) == frozenset({"coordination"})
        assert normalize_disable(["pruning", "coordination"]) == frozenset(
            {"pruning", "coordination"}
        )
        with pytest.raises(ValueError):
            normalize_disable(["nonsense"])
