"""Deletion metric, outcome detection, curves, and statistics."""

import math

import numpy as np
import pytest
import scipy.stats

from spectrast.backend.synthetic import SyntheticBackend
from spectrast.core import ContrastCase, SaliencyMap, Spectrogram
from spectrast.errors import DegenerateStatisticsError, UndefinedCorrelationError
from spectrast.evaluation import (
    DeletionConfig,
    DeletionEvaluator,
    OUTCOME_FOIL,
    OUTCOME_NEITHER,
    OUTCOME_TARGET,
    delete_fraction,
    deletion_order,
    detect_outcome,
    paired_t_test,
    pearson,
    run_deletion_eval,
)
from spectrast.features import save_features

from conftest import single_token_suite


def saliency_of(scores) -> SaliencyMap:
    return SaliencyMap(scores=np.asarray(scores, dtype=np.float64),
                       scorer_kind="base", target_word="x")


class TestDeletionOrder:
    def test_example_with_ties(self):
        order = deletion_order(saliency_of([[3.0, 1.0], [2.0, 2.0]]))
        assert order.tolist() == [0, 2, 3, 1]  # (0,0), (1,0), (1,1), (0,1)

    def test_uniform_is_row_major(self):
        order = deletion_order(saliency_of(np.ones((2, 3))))
        assert order.tolist() == list(range(6))

    def test_single_cell(self):
        assert deletion_order(saliency_of([[4.2]])).tolist() == [0]


class TestDeleteFraction:
    def spec(self):
        return Spectrogram(np.arange(1, 5, dtype=np.float32).reshape(2, 2))

    def test_zero_fraction_is_identity(self):
        spec = self.spec()
        order = np.arange(4)
        assert delete_fraction(spec, order, 0.0) == spec

    def test_full_fraction_fills_everything(self):
        out = delete_fraction(self.spec(), np.arange(4), 1.0, fill=0.0)
        assert (out.data == 0).all()

    def test_half_fraction_deletes_ceil(self):
        order = deletion_order(saliency_of([[3.0, 1.0], [2.0, 2.0]]))
        out = delete_fraction(self.spec(), order, 0.5)
        # ceil(0.5 * 4) = 2 cells: flat indices 0 and 2
        assert out.data.tolist() == [[0.0, 2.0], [0.0, 4.0]]

    def test_monotone_inclusion(self):
        rng = np.random.default_rng(0)
        spec = Spectrogram(rng.random((6, 7)).astype(np.float32) + 1.0)
        order = rng.permutation(42)
        previous = np.zeros(42, dtype=bool)
        for fraction in np.linspace(0, 1, 11):
            zeroed = (delete_fraction(spec, order, float(fraction)).data == 0).ravel()
            assert (previous <= zeroed).all()
            previous = zeroed

    def test_fraction_bounds(self):
        with pytest.raises(ValueError):
            delete_fraction(self.spec(), np.arange(4), 1.5)


class TestDetectOutcome:
    def test_target_present(self):
        assert detect_outcome("je suis curieuse de cela", "curieuse", "curieux") \
            == OUTCOME_TARGET

    def test_foil_present(self):
        assert detect_outcome("je suis curieux", "curieuse", "curieux") == OUTCOME_FOIL

    def test_neither(self):
        assert detect_outcome("je me demande", "curieuse", "curieux") == OUTCOME_NEITHER

    def test_earliest_wins_when_both_present(self):
        assert detect_outcome("curieux puis curieuse", "curieuse", "curieux") \
            == OUTCOME_FOIL

    def test_word_boundaries_not_substrings(self):
        assert detect_outcome("curieusement", "curieuse", "curieux") == OUTCOME_NEITHER

    def test_hyphen_delimits(self):
        assert detect_outcome("demi-curieuse", "curieuse", "curieux") == OUTCOME_TARGET

    def test_case_sensitive(self):
        assert detect_outcome("Curieuse", "curieuse", "curieux") == OUTCOME_NEITHER


class TestDeletionConfig:
    def test_fraction_grid(self):
        cfg = DeletionConfig(step_fraction=0.05, max_fraction=0.20)
        assert cfg.fractions() == (0.0, 0.05, 0.1, 0.15000000000000002, 0.2)
        assert len(cfg.fractions()) == 5

    def test_invariants(self):
        with pytest.raises(ValueError):
            DeletionConfig(step_fraction=0.0)
        with pytest.raises(ValueError):
            DeletionConfig(step_fraction=0.3, max_fraction=0.2)
        with pytest.raises(ValueError):
            DeletionConfig(max_fraction=1.5)

    def test_full_range_flag(self):
        cfg = DeletionConfig(step_fraction=0.25, max_fraction=1.0)
        assert cfg.fractions() == (0.0, 0.25, 0.5, 0.75, 1.0)


class TestRunDeletionEval:
    def _setup(self, tmp_path):
        suite, features = single_token_suite()
        backend = SyntheticBackend(suite)
        path = tmp_path / "utt0.fbnk"
        save_features(features, path)
        case = ContrastCase(
            case_id="utt0", features_path=str(path), reference_text="",
            target_word="bella", foil_word="bello", gender_of_target="F",
            category="1F")
        return suite, backend, case, features

    def _cue_first_map(self, suite, features) -> SaliencyMap:
        model = suite.models["utt0"]
        scores = np.zeros(features.data.shape)
        scores[model.cue_region.frame_start:model.cue_region.frame_end,
               model.cue_region.bin_start:model.cue_region.bin_end] = 1.0
        return SaliencyMap(scores=scores, scorer_kind="relative",
                           target_word="bella", foil_word="bello")

    def test_cue_first_map_flips_with_coverage(self, tmp_path):
        suite, backend, case, features = self._setup(tmp_path)
        saliency = self._cue_first_map(suite, features)
        cfg = DeletionConfig(step_fraction=0.09, max_fraction=0.27)
        curves = run_deletion_eval([(case, saliency)], backend, cfg)
        assert curves.fractions[0] == 0.0
        assert curves.coverage[0] == 1.0 and curves.flip_rate[0] == 0.0
        # cue is 36 of 200 cells (18%); by the 18% step the slot flips while
        # the content region is untouched
        assert curves.coverage[-1] == 1.0
        assert curves.flip_rate[-1] == 1.0
        assert curves.per_case_outcomes[0][0] == OUTCOME_TARGET
        assert curves.per_case_outcomes[0][-1] == OUTCOME_FOIL

    def test_content_first_map_loses_coverage(self, tmp_path):
        # a map that targets a stem subword's content region removes the whole
        # word from the hypothesis: coverage collapses without any flip
        from spectrast.synthdata import SuiteLayout, build_synthetic_suite
        layout = SuiteLayout(n_cases=1, n_frames=60, n_bins=20, cue_frames=8,
                             cue_bins=6, content_frames=6, content_bins=6, seed=4)
        suite, features_by_id, cases = build_synthetic_suite(layout)
        backend = SyntheticBackend(suite)
        case = cases[0]
        features = features_by_id[case.case_id]
        path = tmp_path / case.features_path
        save_features(features, path)
        case = ContrastCase(
            case_id=case.case_id, features_path=str(path),
            reference_text=case.reference_text, target_word=case.target_word,
            foil_word=case.foil_word, gender_of_target=case.gender_of_target,
            category=case.category)
        rect = suite.models[case.case_id].content_regions[0][0]
        scores = np.zeros(features.data.shape)
        scores[rect.frame_start:rect.frame_end, rect.bin_start:rect.bin_end] = 1.0
        saliency = SaliencyMap(scores=scores, scorer_kind="base",
                               target_word=case.target_word)
        cfg = DeletionConfig(step_fraction=0.05, max_fraction=0.10)
        curves = run_deletion_eval([(case, saliency)], backend, cfg)
        assert curves.coverage[0] == 1.0
        assert curves.coverage[-1] == 0.0
        assert curves.flip_rate[-1] is None  # undefined, not zero

    def test_out_of_coverage_excluded_up_front(self, tmp_path):
        suite, backend, case, features = self._setup(tmp_path)
        bad_case = ContrastCase(
            case_id="utt0", features_path=case.features_path, reference_text="",
            target_word="tavolo", foil_word="mare", gender_of_target="M",
            category="1M")
        saliency = self._cue_first_map(suite, features)
        curves = run_deletion_eval([(bad_case, saliency)], backend, DeletionConfig())
        assert curves.case_ids == ()
        assert curves.excluded_case_ids == ("utt0",)

    def test_failed_case_reported(self, tmp_path):
        suite, backend, case, features = self._setup(tmp_path)
        missing = ContrastCase(
            case_id="ghost", features_path=str(tmp_path / "missing.fbnk"),
            reference_text="", target_word="bella", foil_word="bello",
            gender_of_target="F", category="1F")
        saliency = self._cue_first_map(suite, features)
        curves = run_deletion_eval(
            [(case, saliency), (missing, saliency)], backend,
            DeletionConfig(step_fraction=0.5, max_fraction=0.5))
        assert curves.case_ids == ("utt0",)
        assert curves.failed_cases[0][0] == "ghost"

    def test_evaluator_wrapper(self, tmp_path):
        suite, backend, case, features = self._setup(tmp_path)
        saliency = self._cue_first_map(suite, features)
        evaluator = DeletionEvaluator(step_fraction=0.2, max_fraction=0.4)
        curves = evaluator.evaluate([(case, saliency)], backend)
        assert len(curves.fractions) == 3
        assert evaluator.get_params()["step_fraction"] == 0.2


class TestPearson:
    def test_self_correlation(self):
        v = np.array([0.3, 1.2, -0.5, 2.0])
        assert pearson(v, v) == pytest.approx(1.0, abs=1e-12)

    def test_anti_correlation(self):
        v = np.array([0.3, 1.2, -0.5, 2.0])
        assert pearson(v, -v) == pytest.approx(-1.0, abs=1e-12)

    def test_example_value(self):
        # oracle: scipy.stats.pearsonr([1,2,3],[1,2,4]) = 0.9819805060619655
        assert pearson([1, 2, 3], [1, 2, 4]) == pytest.approx(
            0.9819805060619655, abs=1e-12)

    def test_affine_invariance(self):
        rng = np.random.default_rng(5)
        a = rng.standard_normal(40)
        b = rng.standard_normal(40)
        r = pearson(a, b)
        assert pearson(3.0 * a + 1.0, b) == pytest.approx(r, abs=1e-9)
        assert pearson(a, 0.5 * b - 2.0) == pytest.approx(r, abs=1e-9)

    def test_zero_variance_error(self):
        with pytest.raises(UndefinedCorrelationError):
            pearson([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])

    def test_range_bound(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            a = rng.standard_normal(10)
            b = rng.standard_normal(10)
            assert -1.0 - 1e-12 <= pearson(a, b) <= 1.0 + 1e-12


class TestPairedTTest:
    def test_identical_series(self):
        a = np.array([0.1, 0.4, 0.3])
        t, p = paired_t_test(a, a)
        assert t == 0.0 and p == 1.0

    def test_constant_nonzero_differences_degenerate(self):
        with pytest.raises(DegenerateStatisticsError):
            paired_t_test([2.0, 3.0, 4.0, 5.0], [1.0, 2.0, 3.0, 4.0])

    def test_example_against_oracle(self):
        # oracle: scipy.stats.ttest_rel on d = [0.1, 0.2, 0.15, 0.05]
        a = np.array([0.1, 0.2, 0.15, 0.05])
        t, p = paired_t_test(a, np.zeros(4))
        assert t == pytest.approx(3.8729833462074184, abs=1e-12)
        assert p == pytest.approx(0.03046629166217095, abs=1e-9)

    def test_antisymmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            a = rng.standard_normal(8)
            b = rng.standard_normal(8)
            t_ab, p_ab = paired_t_test(a, b)
            t_ba, p_ba = paired_t_test(b, a)
            assert t_ab == pytest.approx(-t_ba, abs=1e-12)
            assert p_ab == pytest.approx(p_ba, abs=1e-12)

    def test_constructed_separation_is_significant(self):
        # two curve series measuring the same sweep, one degraded by a
        # consistent offset plus noise: the paired test must detect it
        rng = np.random.default_rng(21)
        base = np.linspace(1.0, 0.3, 21)
        degraded = base - 0.05 + rng.normal(0, 0.01, size=21)
        t, p = paired_t_test(base, degraded)
        assert p < 0.05
        assert t > 0

    def test_matches_scipy_on_random_series(self):
        rng = np.random.default_rng(8)
        for _ in range(50):
            n = int(rng.integers(3, 30))
            a = rng.standard_normal(n)
            b = rng.standard_normal(n)
            t, p = paired_t_test(a, b)
            oracle = scipy.stats.ttest_rel(a, b)
            assert t == pytest.approx(oracle.statistic, rel=1e-12)
            assert p == pytest.approx(oracle.pvalue, rel=1e-9)

    def test_length_validation(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])
