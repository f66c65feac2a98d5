"""Tests for the cross-validated KNN imputation baseline."""

import numpy as np
import pytest

import datagen
from mixedimpute.data import MixedMatrix, Variable, VariableKind
from mixedimpute.evaluation import MissingnessSpec, inject_mcar, pfc
from mixedimpute.knn import (
    KnnConfig,
    cv_select_k,
    knn_impute_continuous,
    knn_impute_mixed,
)

CONT = VariableKind.CONTINUOUS
CAT = VariableKind.CATEGORICAL


def _matrix(values, mask=None):
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.isnan(values)
    schema = tuple(Variable(f"x{j}", CONT) for j in range(values.shape[1]))
    return MixedMatrix(values, mask, schema)


class TestKnnImputeContinuous:
    def test_hand_computed_weighted_average(self):
        # target column x2 = [NA, 0, 0]; candidates x0 = [2, 1, 1] and
        # x1 = [6, 3, 3].  Co-observed distances from x2 to the candidates:
        #   d(x2, x0) = sqrt(((1-0)^2 + (1-0)^2) / 2) = 1
        #   d(x2, x1) = sqrt(((3-0)^2 + (3-0)^2) / 2) = 3
        # with k = 2 the missing cell becomes
        #   (2/1 + 6/3) / (1/1 + 1/3) = 4 / (4/3) = 3
        x = _matrix([[2.0, 6.0, np.nan], [1.0, 3.0, 0.0], [1.0, 3.0, 0.0]])
        out = knn_impute_continuous(x, k=2)
        assert out.values[0, 2] == pytest.approx(3.0, abs=1e-6)

    def test_k1_copies_nearest_column(self):
        x = _matrix(
            [
                [np.nan, 10.0, 50.0],
                [1.0, 1.1, 9.0],
                [2.0, 2.1, 7.0],
                [3.0, 2.9, -2.0],
            ]
        )
        out = knn_impute_continuous(x, k=1)
        # x1 tracks x0 closely, x2 does not; nearest neighbour is x1
        assert out.values[0, 0] == pytest.approx(10.0, abs=1e-6)

    def test_duplicate_column_dominates(self):
        # zero distance to an exact duplicate gives it weight 1/eps, so
        # the imputed value collapses onto the duplicate's entry
        x = _matrix(
            [
                [np.nan, 7.0, -3.0],
                [1.0, 1.0, 4.0],
                [2.0, 2.0, -1.0],
                [5.0, 5.0, 2.0],
            ]
        )
        out = knn_impute_continuous(x, k=2)
        assert out.values[0, 0] == pytest.approx(7.0, abs=1e-6)

    def test_identical_columns_reproduce_shared_value(self):
        base = np.array([4.0, 1.0, 2.0, 8.0])
        values = np.column_stack([base, base, base])
        values[2, 0] = np.nan
        out = knn_impute_continuous(_matrix(values), k=2)
        assert out.values[2, 0] == pytest.approx(2.0, abs=1e-6)

    def test_fewer_candidates_than_k_uses_all(self):
        x = _matrix([[np.nan, 1.0, 1.0], [0.0, 2.0, 2.0], [0.0, 3.0, 3.0]])
        out_big = knn_impute_continuous(x, k=2)
        np.testing.assert_allclose(out_big.values[0, 0], 1.0, atol=1e-6)

    def test_no_candidates_falls_back_to_column_mean(self):
        # row 0 observes nothing besides the target, so no candidate
        # column is co-observed there and the fallback is the target mean
        x = _matrix(
            [
                [np.nan, np.nan, np.nan],
                [1.0, 5.0, 7.0],
                [3.0, 6.0, 8.0],
            ]
        )
        out = knn_impute_continuous(x, k=1)
        assert out.values[0, 0] == pytest.approx(2.0)
        assert out.values[0, 1] == pytest.approx(5.5)

    def test_constant_column_excluded_from_neighbours(self):
        # x1 is constant and would otherwise be the closest neighbour of
        # x0 in distance terms; the imputation must come from x2 instead
        x = _matrix(
            [
                [np.nan, 5.0, 42.0],
                [0.1, 5.0, 0.2],
                [-0.1, 5.0, -0.3],
                [0.05, 5.0, 0.1],
            ]
        )
        out = knn_impute_continuous(x, k=1)
        assert out.values[0, 0] == pytest.approx(42.0, abs=1e-6)

    def test_constant_target_still_uses_neighbours(self):
        # exclusion applies only to the neighbour role: a column that is
        # constant at its observed cells is imputed like any other
        x = _matrix([[np.nan, 1.0, 1.5], [5.0, 2.0, 2.0], [5.0, 3.0, 2.5]])
        out = knn_impute_continuous(x, k=1)
        # d(x0,x1) = sqrt(13/2) < d(x0,x2) = sqrt(61/8), so x1 wins
        assert out.values[0, 0] == pytest.approx(1.0, abs=1e-6)

    def test_constant_column_mean_fallback_without_candidates(self):
        # the only other column is constant, leaving no usable neighbour
        x = _matrix([[np.nan, 7.0, 7.0], [5.0, 7.0, 7.0], [6.0, 7.0, 7.0]])
        out = knn_impute_continuous(x, k=1)
        assert out.values[0, 0] == pytest.approx(5.5)

    def test_complete_input_returned_unchanged(self):
        x = _matrix([[1.0, 2.0], [3.0, 4.0]])
        out = knn_impute_continuous(x, k=1)
        np.testing.assert_array_equal(out.values, x.values)
        assert not out.mask.any()

    def test_observed_cells_preserved_exactly(self):
        rng = np.random.default_rng(3)
        values = rng.normal(size=(12, 5))
        mask = rng.random((12, 5)) < 0.2
        values[mask] = np.nan
        x = _matrix(values, mask)
        out = knn_impute_continuous(x, k=3)
        np.testing.assert_array_equal(out.values[~mask], x.values[~mask])

    def test_k_bounds(self):
        x = _matrix([[np.nan, 1.0], [1.0, 2.0]])
        with pytest.raises(ValueError, match="k"):
            knn_impute_continuous(x, k=0)
        with pytest.raises(ValueError, match="k"):
            knn_impute_continuous(x, k=2)   # k must stay below p

    def test_categorical_input_rejected(self):
        x = MixedMatrix(
            np.array([[0.0, 1.0], [1.0, 0.0]]),
            np.zeros((2, 2), dtype=bool),
            (Variable("g", CAT, ("a", "b")), Variable("x", CONT)),
        )
        with pytest.raises(ValueError, match="continuous"):
            knn_impute_continuous(x, k=1)


def _duplicate_pairs_matrix(n=30, seed=0, missing=0.1):
    """Columns come in near-identical pairs, so k=1 is clearly optimal."""
    rng = np.random.default_rng(seed)
    base = rng.normal(size=(n, 3))
    values = np.column_stack(
        [base[:, 0], base[:, 0], base[:, 1], base[:, 1], base[:, 2], base[:, 2]]
    )
    values += rng.normal(scale=1e-3, size=values.shape)
    mask = rng.random(values.shape) < missing
    for j in range(values.shape[1]):
        mask[0, j] = False
    out = values.copy()
    out[mask] = np.nan
    return _matrix(out, mask)


class TestCvSelectK:
    def test_single_candidate_is_selected(self):
        x = _duplicate_pairs_matrix(seed=1)
        cfg = KnnConfig(k_candidates=(3,), seed=4)
        k_best, errors, k_values = cv_select_k(x, cfg)
        assert k_best == 3
        assert k_values == (3,)
        assert errors.shape == (1, cfg.n_validation_sets)

    def test_exact_duplicates_select_k1_with_zero_error(self):
        # every column is a copy of the same base, so any neighbour
        # reproduces the held-out truth: all candidate k score ~0 and the
        # tie goes to the smallest k
        base = np.random.default_rng(2).normal(size=30)
        x = _matrix(np.tile(base[:, None], (1, 6)))
        cfg = KnnConfig(k_candidates=(1, 3, 5), n_validation_sets=4, seed=5)
        k_best, errors, k_values = cv_select_k(x, cfg)
        assert k_best == 1
        assert errors.max() < 1e-6

    def test_errors_nonnegative_and_shaped(self):
        x = _duplicate_pairs_matrix(seed=3)
        cfg = KnnConfig(k_candidates=(1, 2, 4), n_validation_sets=3, seed=6)
        _, errors, k_values = cv_select_k(x, cfg)
        assert errors.shape == (3, 3)
        assert (errors >= 0).all()
        assert k_values == (1, 2, 4)

    def test_deterministic(self):
        x = _duplicate_pairs_matrix(seed=4)
        cfg = KnnConfig(k_candidates=(1, 3), seed=7)
        r1 = cv_select_k(x, cfg)
        r2 = cv_select_k(x, cfg)
        assert r1[0] == r2[0]
        np.testing.assert_array_equal(r1[1], r2[1])

    def test_oversized_candidates_filtered(self):
        x = _duplicate_pairs_matrix(seed=5)   # 6 encoded columns
        cfg = KnnConfig(k_candidates=(2, 6, 9), seed=8)
        _, errors, k_values = cv_select_k(x, cfg)
        assert k_values == (2,)
        assert errors.shape[0] == 1

    def test_all_candidates_oversized(self):
        x = _matrix(np.random.default_rng(6).normal(size=(10, 2)))
        with pytest.raises(ValueError, match="no usable k"):
            cv_select_k(x, KnnConfig(k_candidates=(2, 3), seed=9))

    def test_config_validation(self):
        with pytest.raises(ValueError, match="k_candidates"):
            KnnConfig(k_candidates=())
        with pytest.raises(ValueError, match="k_candidates"):
            KnnConfig(k_candidates=(0, 1))
        with pytest.raises(ValueError, match="cv_missing_fraction"):
            KnnConfig(cv_missing_fraction=0.0)
        with pytest.raises(ValueError, match="n_validation_sets"):
            KnnConfig(n_validation_sets=0)


def _mixed_signal_matrix(n=20, seed=0, missing=0.1):
    """Five correlated continuous columns plus a sign-of-x0 label."""
    rng = np.random.default_rng(seed)
    x0 = np.where(rng.random(n) < 0.5, -1.0, 1.0) * rng.uniform(1.0, 2.0, n)
    values = np.column_stack(
        [
            x0,
            x0 + rng.normal(scale=0.05, size=n),
            x0 + rng.normal(scale=0.05, size=n),
            -x0 + rng.normal(scale=0.05, size=n),
            rng.normal(size=n),
            (x0 > 0).astype(float),
        ]
    )
    schema = tuple(
        [Variable(f"x{j}", CONT) for j in range(5)]
        + [Variable("g", CAT, ("neg", "pos"))]
    )
    complete = MixedMatrix(values, np.zeros_like(values, dtype=bool), schema)
    masked, mask = inject_mcar(complete, MissingnessSpec(missing, seed=seed))
    return complete, masked, mask


class TestKnnImputeMixed:
    def test_complete_input_identity(self):
        complete, _, _ = _mixed_signal_matrix(seed=1)
        out = knn_impute_mixed(complete, KnnConfig(seed=1))
        np.testing.assert_array_equal(out.imputed.values, complete.values)
        assert out.k_best is None
        assert out.k_values == ()

    def test_observed_cells_preserved_exactly(self):
        complete, masked, mask = _mixed_signal_matrix(seed=2)
        out = knn_impute_mixed(masked, KnnConfig(k_candidates=(1, 3), seed=2))
        np.testing.assert_array_equal(
            out.imputed.values[~mask], complete.values[~mask]
        )
        assert not out.imputed.mask.any()

    def test_categorical_cells_recovered(self):
        # the label column duplicates the sign of five redundant
        # continuous columns, so KNN should rarely misclassify it
        complete, masked, mask = _mixed_signal_matrix(seed=3)
        out = knn_impute_mixed(masked, KnnConfig(k_candidates=(1, 3), seed=3))
        if mask[:, 5].any():
            assert pfc(complete, out.imputed, mask) < 0.2
        codes = out.imputed.values[:, 5]
        assert np.isin(codes, [0.0, 1.0]).all()

    def test_continuous_cells_recovered(self):
        # duplicated columns let KNN land far below the mean-imputation
        # anchor of 1.0 on the masked continuous cells
        from mixedimpute.evaluation import nrmse

        complete, masked, mask = _mixed_signal_matrix(seed=4)
        out = knn_impute_mixed(masked, KnnConfig(k_candidates=(1, 3), seed=4))
        cont_mask = mask.copy()
        cont_mask[:, 5] = False
        assert nrmse(complete, out.imputed, cont_mask) < 0.5

    def test_reports_selection_diagnostics(self):
        _, masked, _ = _mixed_signal_matrix(seed=5)
        cfg = KnnConfig(k_candidates=(1, 2, 4), n_validation_sets=3, seed=5)
        out = knn_impute_mixed(masked, cfg)
        assert out.k_best in (1, 2, 4)
        assert out.k_values == (1, 2, 4)
        assert out.cv_errors.shape == (3, 3)

    def test_deterministic(self):
        _, masked, _ = _mixed_signal_matrix(seed=6)
        cfg = KnnConfig(k_candidates=(1, 3), seed=6)
        o1 = knn_impute_mixed(masked, cfg)
        o2 = knn_impute_mixed(masked, cfg)
        np.testing.assert_array_equal(o1.imputed.values, o2.imputed.values)
        assert o1.k_best == o2.k_best

    def test_fully_missing_column_rejected(self):
        values = np.array([[np.nan, 1.0], [np.nan, 2.0], [np.nan, 3.0]])
        with pytest.raises(ValueError, match="x0"):
            knn_impute_mixed(_matrix(values), KnnConfig(k_candidates=(1,)))

    def test_benchmark_dataset_beats_nothing_catastrophically(self):
        # smoke test on the structured generator used by the harness
        complete = datagen.mixed_structured(n=60, seed=7)
        masked, mask = inject_mcar(complete, MissingnessSpec(0.1, seed=7))
        out = knn_impute_mixed(masked, KnnConfig(seed=7))
        assert not out.imputed.mask.any()
        np.testing.assert_array_equal(
            out.imputed.values[~mask], complete.values[~mask]
        )
