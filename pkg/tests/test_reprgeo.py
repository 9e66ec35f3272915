import math

import numpy as np
import pytest

from uncal import reprgeo
from uncal.errors import ShapeError, UndefinedSimilarity
from uncal.reprgeo import TokenAnnotation, TokenDistPair, TokenType


class TestKl:
    def test_identical_distributions(self):
        p = np.array([0.2, 0.3, 0.5])
        assert reprgeo.kl(p, p) == 0.0

    def test_hand_value(self):
        assert reprgeo.kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_zero_reference_smoothed_finite(self):
        value = reprgeo.kl([0.5, 0.5], [1.0, 0.0], epsilon=1e-9)
        assert np.isfinite(value) and value > 5.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reprgeo.kl([0.5, 0.5], [1.0])

    def test_nonnegative_on_random_pairs(self, rng):
        for _ in range(50):
            n = int(rng.integers(2, 30))
            p = rng.dirichlet(np.ones(n))
            q = rng.dirichlet(np.ones(n))
            assert reprgeo.kl(p, q) >= 0.0


class TestKlByType:
    def pair(self, position, p, q):
        return TokenDistPair(position, np.array(p), np.array(q))

    def test_uniform_kl_gives_count_share(self):
        pairs = [self.pair(i, [1.0, 0.0], [0.5, 0.5]) for i in range(4)]
        annotations = [
            TokenAnnotation(0, TokenType.CONFIDENCE_DIGIT),
            TokenAnnotation(1, TokenType.REASONING_TOKEN),
            TokenAnnotation(2, TokenType.REASONING_TOKEN),
            TokenAnnotation(3, TokenType.REASONING_TOKEN),
        ]
        table = reprgeo.kl_by_type(pairs, annotations)
        assert table[TokenType.CONFIDENCE_DIGIT].mass_fraction == pytest.approx(0.25)
        assert table[TokenType.REASONING_TOKEN].mass_fraction == pytest.approx(0.75)

    def test_single_hot_type_takes_all_mass(self):
        pairs = [
            self.pair(0, [1.0, 0.0], [0.5, 0.5]),
            self.pair(1, [0.5, 0.5], [0.5, 0.5]),
        ]
        annotations = [
            TokenAnnotation(0, TokenType.CONFIDENCE_DIGIT),
            TokenAnnotation(1, TokenType.OTHER),
        ]
        table = reprgeo.kl_by_type(pairs, annotations)
        assert table[TokenType.CONFIDENCE_DIGIT].mass_fraction == pytest.approx(1.0)
        assert table[TokenType.OTHER].mass_fraction == pytest.approx(0.0)

    def test_five_position_hand_fixture(self):
        # kl values: ln2 at positions 0,1 (digit), ln2 at 2 (uncertainty),
        # 0 at 3,4 (reasoning)
        pairs = [
            self.pair(0, [1, 0], [0.5, 0.5]),
            self.pair(1, [1, 0], [0.5, 0.5]),
            self.pair(2, [1, 0], [0.5, 0.5]),
            self.pair(3, [0.5, 0.5], [0.5, 0.5]),
            self.pair(4, [0.5, 0.5], [0.5, 0.5]),
        ]
        annotations = [
            TokenAnnotation(0, TokenType.CONFIDENCE_DIGIT),
            TokenAnnotation(1, TokenType.CONFIDENCE_DIGIT),
            TokenAnnotation(2, TokenType.UNCERTAINTY_TOKEN),
            TokenAnnotation(3, TokenType.REASONING_TOKEN),
            TokenAnnotation(4, TokenType.REASONING_TOKEN),
        ]
        table = reprgeo.kl_by_type(pairs, annotations)
        assert table[TokenType.CONFIDENCE_DIGIT].mass_fraction == pytest.approx(2 / 3)
        assert table[TokenType.UNCERTAINTY_TOKEN].mass_fraction == pytest.approx(1 / 3)
        assert table[TokenType.CONFIDENCE_DIGIT].mean_kl == pytest.approx(math.log(2.0))
        assert TokenType.NEARBY_CONTEXT not in table

    def test_fractions_sum_to_one(self, rng):
        pairs = []
        annotations = []
        types = list(TokenType)
        for i in range(24):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            pairs.append(TokenDistPair(i, p, q))
            annotations.append(TokenAnnotation(i, types[i % len(types)]))
        table = reprgeo.kl_by_type(pairs, annotations)
        total = sum(row.mass_fraction for row in table.values())
        assert total == pytest.approx(1.0, abs=1e-9)

    def test_missing_annotation_rejected(self):
        pairs = [self.pair(0, [1, 0], [0.5, 0.5])]
        with pytest.raises(ValueError):
            reprgeo.kl_by_type(pairs, [])


class TestLinearCka:
    def test_self_similarity(self, rng):
        x = rng.normal(size=(30, 6))
        assert reprgeo.linear_cka(x, x) == pytest.approx(1.0, abs=1e-12)

    def test_orthogonal_and_scale_invariance(self, rng):
        x = rng.normal(size=(40, 8))
        for _ in range(5):
            q, _ = np.linalg.qr(rng.normal(size=(8, 8)))
            s = float(rng.uniform(0.1, 10.0))
            assert reprgeo.linear_cka(x, s * x @ q) == pytest.approx(1.0, abs=1e-8)

    def test_independent_matrices_score_low(self):
        rng = np.random.default_rng(12345)
        x = rng.normal(size=(100, 10))
        y = rng.normal(size=(100, 10))
        assert reprgeo.linear_cka(x, y) < 0.3

    def test_symmetry(self, rng):
        x = rng.normal(size=(25, 5))
        y = rng.normal(size=(25, 7))
        assert reprgeo.linear_cka(x, y) == pytest.approx(
            reprgeo.linear_cka(y, x), abs=1e-10
        )

    def test_zero_variance_rejected(self):
        with pytest.raises(UndefinedSimilarity):
            reprgeo.linear_cka(np.ones((10, 3)), np.random.default_rng(0).normal(size=(10, 3)))

    def test_row_mismatch_rejected(self, rng):
        with pytest.raises(ShapeError):
            reprgeo.linear_cka(rng.normal(size=(10, 3)), rng.normal(size=(11, 3)))


class TestPca:
    def test_rank_one_line(self, rng):
        direction = np.array([1.0, 2.0, -1.0])
        t = rng.normal(size=(50, 1))
        x = t * direction
        result = reprgeo.pca_project(x, 1)
        assert result.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-8)

    def test_isotropic_ratios(self):
        rng = np.random.default_rng(777)
        x = rng.normal(size=(5000, 10))
        result = reprgeo.pca_project(x, 10)
        np.testing.assert_allclose(result.explained_variance_ratio, 0.1, rtol=0.2)

    def test_hand_fixture_closed_form(self):
        # four points: variance 8/3 along axis 0, 2/3 along axis 1
        x = np.array([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
        result = reprgeo.pca_project(x, 2)
        np.testing.assert_allclose(
            result.explained_variance_ratio, [0.8, 0.2], atol=1e-10
        )
        np.testing.assert_allclose(np.abs(result.components[0]), [1.0, 0.0], atol=1e-8)
        # sign convention: dominant entry is positive
        assert result.components[0][0] > 0 and result.components[1][1] > 0

    def test_ratios_non_increasing_and_bounded(self, rng):
        x = rng.normal(size=(60, 7)) @ np.diag([3, 2.5, 2, 1.5, 1, 0.5, 0.1])
        result = reprgeo.pca_project(x, 5)
        ratios = result.explained_variance_ratio
        assert all(a >= b - 1e-12 for a, b in zip(ratios, ratios[1:]))
        assert ratios.sum() <= 1.0 + 1e-9

    def test_projection_shape_and_determinism(self, rng):
        x = rng.normal(size=(30, 5))
        first = reprgeo.pca_project(x, 3, seed=9)
        second = reprgeo.pca_project(x, 3, seed=9)
        assert first.projection.shape == (30, 3)
        np.testing.assert_array_equal(first.projection, second.projection)

    def test_dimension_guards(self, rng):
        x = rng.normal(size=(5, 3))
        with pytest.raises(ShapeError):
            reprgeo.pca_project(x, 4)
        with pytest.raises(ShapeError):
            reprgeo.pca_project(rng.normal(size=(3, 5)), 3)

    def test_zero_variance_rejected(self):
        with pytest.raises(UndefinedSimilarity):
            reprgeo.pca_project(np.ones((6, 2)), 1)


class TestLogitLensBins:
    def test_all_mass_on_nine(self):
        masses = reprgeo.logit_lens_bins({9: 0.7})
        assert masses.high == pytest.approx(0.7)
        assert masses.low == 0.0 and masses.mid == 0.0

    def test_uniform_digit_split(self):
        digit_probs = {d: 1.0 / 11.0 for d in range(11)}
        masses = reprgeo.logit_lens_bins(digit_probs, edges=(0.3, 0.7))
        assert masses.low == pytest.approx(4.0 / 11.0)
        assert masses.mid == pytest.approx(4.0 / 11.0)
        assert masses.high == pytest.approx(3.0 / 11.0)
        assert masses.low + masses.mid + masses.high == pytest.approx(1.0)

    def test_zero_vector(self):
        masses = reprgeo.logit_lens_bins({})
        assert (masses.low, masses.mid, masses.high) == (0.0, 0.0, 0.0)

    def test_digit_range_validated(self):
        with pytest.raises(ValueError):
            reprgeo.logit_lens_bins({11: 0.5})


class TestDrift:
    def test_identical_is_zero(self, rng):
        w = rng.normal(size=(4, 4))
        assert reprgeo.frobenius_drift(w, w) == 0.0

    def test_doubling_is_one(self, rng):
        w = rng.normal(size=(4, 4))
        assert reprgeo.frobenius_drift(w, 2.0 * w) == pytest.approx(1.0, abs=1e-12)

    def test_hand_fixture(self):
        base = np.eye(2)
        cal = np.array([[1.0, 1.0], [0.0, 1.0]])
        assert reprgeo.frobenius_drift(base, cal) == pytest.approx(1.0 / math.sqrt(2.0))

    def test_zero_base_rejected(self):
        with pytest.raises(UndefinedSimilarity):
            reprgeo.frobenius_drift(np.zeros((2, 2)), np.eye(2))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            reprgeo.frobenius_drift(np.eye(2), np.eye(3))


class TestEmbeddingDrift:
    def test_no_drift_ratio_absent(self):
        w = np.eye(4)
        report = reprgeo.embedding_drift_report([0, 1], [2, 3], w, w.copy())
        assert report.ratio is None

    def test_interest_only_drift_is_infinite(self):
        base = np.eye(4)
        cal = base.copy()
        cal[0, 0] = 2.0
        report = reprgeo.embedding_drift_report([0], [2, 3], base, cal)
        assert report.ratio == math.inf

    def test_planted_ratio(self):
        base = np.ones((4, 2))
        cal = base.copy()
        cal[0] += (0.6, 0.8)  # drift 1.0 / sqrt(2) on the interest row
        cal[2] += (0.3, 0.4)  # drift 0.5 / sqrt(2) on the baseline row
        report = reprgeo.embedding_drift_report([0], [2], base, cal)
        assert report.ratio == pytest.approx(2.0, abs=1e-10)

    def test_overlapping_sets_rejected(self):
        with pytest.raises(ValueError):
            reprgeo.embedding_drift_report([0, 1], [1, 2], np.eye(3), np.eye(3))
