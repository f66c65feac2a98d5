"""Tests for metrics, MCAR injection, the Wilcoxon test, and the runners."""

import itertools
import json
import math

import numpy as np
import pytest
import scipy.stats

import datagen
from mixedimpute.data import MixedMatrix, Variable, VariableKind
from mixedimpute.evaluation import (
    BenchmarkReport,
    MissingnessSpec,
    inject_mcar,
    nrmse,
    pfc,
    run_benchmark,
    run_sweep,
    wilcoxon_paired,
)
from mixedimpute.forest import ForestParams
from mixedimpute.knn import KnnConfig
from mixedimpute.missforest import MissForestConfig

CONT = VariableKind.CONTINUOUS
CAT = VariableKind.CATEGORICAL


def _cont_matrix(values):
    values = np.asarray(values, dtype=float)
    schema = tuple(Variable(f"x{j}", CONT) for j in range(values.shape[1]))
    return MixedMatrix(values, np.zeros_like(values, dtype=bool), schema)


def _cat_matrix(codes, n_levels=4):
    codes = np.asarray(codes, dtype=float)
    schema = tuple(
        Variable(f"g{j}", CAT, tuple(f"L{i}" for i in range(n_levels)))
        for j in range(codes.shape[1])
    )
    return MixedMatrix(codes, np.zeros_like(codes, dtype=bool), schema)


# ---------------------------------------------------------------------------
# Independent Wilcoxon oracle: full enumeration over sign assignments
# ---------------------------------------------------------------------------

def _average_ranks(absd):
    order = np.argsort(absd, kind="stable")
    ranks = np.empty(absd.size)
    i = 0
    while i < absd.size:
        j = i
        while j + 1 < absd.size and absd[order[j + 1]] == absd[order[i]]:
            j += 1
        avg = (i + j) / 2.0 + 1.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        i = j + 1
    return ranks


def brute_force_wilcoxon(a, b):
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    d = d[d != 0.0]
    n = d.size
    if n == 0:
        return 1.0
    # doubled ranks are integers, so comparisons below are exact
    doubled = np.rint(2 * _average_ranks(np.abs(d))).astype(int)
    w_obs = int(doubled[d > 0].sum())
    count = 0
    for signs in itertools.product((0, 1), repeat=n):
        w = sum(r for r, s in zip(doubled, signs) if s)
        if w >= w_obs:
            count += 1
    return count / 2**n


class TestWilcoxon:
    def test_identical_samples(self):
        a = [1.0, 2.0, 3.0, 4.0, 5.0]
        assert wilcoxon_paired(a, a) == 1.0

    def test_all_positive_differences_n10(self):
        # all 10 differences positive -> one-sided p = 1/2^10
        a = np.arange(10) + 1.0
        b = np.arange(10)
        assert wilcoxon_paired(a, b) == pytest.approx(1 / 1024, abs=1e-15)

    def test_four_positives_one_large_negative(self):
        a = np.array([1.0, 2.0, 3.0, 4.0, 0.0])
        b = np.array([0.0, 0.0, 0.0, 0.0, 5.0])
        assert wilcoxon_paired(a, b) == pytest.approx(
            brute_force_wilcoxon(a, b), abs=1e-12
        )

    def test_matches_enumeration_on_random_samples(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            n = int(rng.integers(5, 13))
            # half-integer grid makes ties and zero differences common
            a = rng.integers(0, 6, size=n) / 2.0
            b = rng.integers(0, 6, size=n) / 2.0
            expected = brute_force_wilcoxon(a, b)
            assert wilcoxon_paired(a, b) == pytest.approx(expected, abs=1e-12)

    def test_large_sample_uses_corrected_normal_approximation(self):
        rng = np.random.default_rng(7)
        a = rng.normal(0.3, 1.0, size=40)
        b = rng.normal(0.0, 1.0, size=40)
        d = a - b
        expected = scipy.stats.wilcoxon(
            d[d != 0], zero_method="wilcox", correction=True,
            alternative="greater", method="approx",
        ).pvalue
        assert wilcoxon_paired(a, b) == pytest.approx(expected, rel=1e-10)

    def test_short_input_rejected(self):
        with pytest.raises(ValueError, match="5"):
            wilcoxon_paired([1.0, 2.0], [0.0, 0.0])

    def test_p_always_in_unit_interval(self):
        rng = np.random.default_rng(55)
        for _ in range(50):
            n = int(rng.integers(5, 30))
            a = rng.normal(size=n)
            b = rng.normal(size=n)
            p = wilcoxon_paired(a, b)
            assert 0.0 < p <= 1.0


class TestInjectMcar:
    def test_zero_rounded_count_leaves_input_unchanged(self):
        x = _cont_matrix(np.ones((3, 3)))
        masked, mask = inject_mcar(x, MissingnessSpec(0.01, seed=1))
        assert not mask.any()
        np.testing.assert_array_equal(masked.values, x.values)

    def test_exact_cell_count(self):
        rng = np.random.default_rng(0)
        x = _cont_matrix(rng.normal(size=(10, 10)))
        masked, mask = inject_mcar(x, MissingnessSpec(0.1, seed=2))
        assert mask.sum() == 10
        assert masked.n_missing == 10

    def test_deterministic_mask(self):
        x = _cont_matrix(np.random.default_rng(1).normal(size=(8, 5)))
        _, m1 = inject_mcar(x, MissingnessSpec(0.2, seed=9))
        _, m2 = inject_mcar(x, MissingnessSpec(0.2, seed=9))
        np.testing.assert_array_equal(m1, m2)

    def test_column_coverage_maintained(self):
        x = _cont_matrix(np.random.default_rng(2).normal(size=(4, 3)))
        for seed in range(50):
            _, mask = inject_mcar(x, MissingnessSpec(0.5, seed=seed))
            assert (~mask).sum(axis=0).min() >= 1

    def test_unsatisfiable_coverage_raises(self):
        x = _cont_matrix(np.ones((1, 2)))   # any masked cell empties a column
        with pytest.raises(RuntimeError, match="coverage"):
            inject_mcar(x, MissingnessSpec(0.5, seed=3))

    def test_requires_complete_input(self):
        x = MixedMatrix(
            np.array([[1.0, np.nan]]), np.array([[False, True]]),
            (Variable("a", CONT), Variable("b", CONT)),
        )
        with pytest.raises(ValueError, match="complete"):
            inject_mcar(x, MissingnessSpec(0.1))

    def test_fraction_validated(self):
        with pytest.raises(ValueError, match="fraction"):
            MissingnessSpec(0.0)
        with pytest.raises(ValueError, match="fraction"):
            MissingnessSpec(1.0)


class TestNrmse:
    def test_perfect_imputation(self):
        truth = _cont_matrix([[1.0], [2.0], [3.0]])
        mask = np.ones((3, 1), dtype=bool)
        assert nrmse(truth, truth, mask) == 0.0

    def test_mean_imputation_anchor_is_one(self):
        # truth {1,2,3} all imputed as their mean 2: msq = 2/3 = pop var
        truth = _cont_matrix([[1.0], [2.0], [3.0]])
        imputed = _cont_matrix([[2.0], [2.0], [2.0]])
        mask = np.ones((3, 1), dtype=bool)
        assert nrmse(truth, imputed, mask) == pytest.approx(1.0, abs=1e-12)

    def test_hand_computed_value(self):
        # imputed {1,2,3}, truth {1,2,4}: sqrt((1/3) / (14/9)) = sqrt(3/14)
        truth = _cont_matrix([[1.0], [2.0], [4.0]])
        imputed = _cont_matrix([[1.0], [2.0], [3.0]])
        mask = np.ones((3, 1), dtype=bool)
        assert nrmse(truth, imputed, mask) == pytest.approx(
            math.sqrt(3 / 14), abs=1e-12
        )

    def test_no_continuous_masked_cells(self):
        truth = _cat_matrix([[0], [1]])
        with pytest.raises(ValueError, match="continuous"):
            nrmse(truth, truth, np.ones((2, 1), dtype=bool))

    def test_degenerate_truth(self):
        truth = _cont_matrix([[5.0], [5.0]])
        with pytest.raises(ValueError, match="degenerate"):
            nrmse(truth, truth, np.ones((2, 1), dtype=bool))

    def test_scale_invariance_single_column(self):
        # scaling truth and imputation by a power of two is exact in
        # floating point, so the NRMSE must match bit for bit
        rng = np.random.default_rng(4)
        truth = rng.normal(size=(20, 1))
        imputed = truth + rng.normal(scale=0.3, size=(20, 1))
        mask = rng.random((20, 1)) < 0.5
        mask[0, 0] = True
        t1 = _cont_matrix(np.where(np.isnan(truth), 0, truth))
        i1 = _cont_matrix(imputed)
        base = nrmse(t1, i1, mask)
        scaled = nrmse(_cont_matrix(truth * 4.0), _cont_matrix(imputed * 4.0), mask)
        assert scaled == base


class TestPfc:
    def test_all_correct(self):
        truth = _cat_matrix([[0], [1], [2]])
        assert pfc(truth, truth, np.ones((3, 1), dtype=bool)) == 0.0

    def test_half_wrong(self):
        truth = _cat_matrix([[0], [1], [2], [3]])
        imp = _cat_matrix([[0], [1], [3], [2]])
        assert pfc(truth, imp, np.ones((4, 1), dtype=bool)) == 0.5

    def test_all_wrong(self):
        truth = _cat_matrix([[0], [1]])
        imp = _cat_matrix([[1], [0]])
        assert pfc(truth, imp, np.ones((2, 1), dtype=bool)) == 1.0

    def test_only_masked_cells_count(self):
        truth = _cat_matrix([[0], [1], [2], [3]])
        imp = _cat_matrix([[0], [1], [3], [2]])
        mask = np.array([[True], [True], [True], [False]])
        assert pfc(truth, imp, mask) == pytest.approx(1 / 3)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(6)
        truth_codes = rng.integers(0, 4, size=(30, 2))
        imp_codes = rng.integers(0, 4, size=(30, 2))
        mask = rng.random((30, 2)) < 0.4
        mask[0] = True
        perm = rng.permutation(4)
        base = pfc(_cat_matrix(truth_codes), _cat_matrix(imp_codes), mask)
        relab = pfc(
            _cat_matrix(perm[truth_codes]), _cat_matrix(perm[imp_codes]), mask
        )
        assert base == relab

    def test_no_categorical_masked_cells(self):
        truth = _cont_matrix([[1.0]])
        with pytest.raises(ValueError, match="categorical"):
            pfc(truth, truth, np.ones((1, 1), dtype=bool))


class TestRunBenchmark:
    def test_structure_and_lengths(self):
        x = datagen.continuous_gaussian(n=50, p=4, seed=1)
        report = run_benchmark(
            x, ["mean_mode"], [0.1, 0.2], n_simulations=3, seed=5,
        )
        for f in ("0.1", "0.2"):
            assert len(report.results["mean_mode"][f]["nrmse"]) == 3
            assert report.results["mean_mode"][f]["pfc"] == [None, None, None]
        assert report.wilcoxon["tests"] == {}
        doc = json.loads(report.to_json())
        assert set(doc) == {"config", "results", "summary", "wilcoxon", "errors"}

    def test_single_simulation_has_no_wilcoxon(self):
        x = datagen.continuous_gaussian(n=40, p=4, seed=2)
        report = run_benchmark(
            x, ["missforest", "mean_mode"], [0.1], 1, seed=6,
            mf_config=MissForestConfig(forest=ForestParams(n_tree=5)),
        )
        assert report.wilcoxon["tests"]["mean_mode"]["0.1"]["nrmse"] is None

    def test_deterministic_reports(self):
        x = datagen.mixed_structured(n=40, seed=3)
        kwargs = dict(
            methods=["missforest", "mean_mode"], fractions=[0.1],
            n_simulations=2, seed=11,
            mf_config=MissForestConfig(forest=ForestParams(n_tree=4)),
        )
        r1 = run_benchmark(x, **kwargs)
        r2 = run_benchmark(x, **kwargs)
        assert r1.to_json() == r2.to_json()
        assert r1.to_csv() == r2.to_csv()

    def test_masks_shared_across_method_subsets(self):
        # the mask stream depends only on (seed, fraction, sim), so the
        # mean_mode column is identical whether or not other methods run
        x = datagen.continuous_gaussian(n=40, p=4, seed=4)
        solo = run_benchmark(x, ["mean_mode"], [0.1], 3, seed=12)
        both = run_benchmark(
            x, ["missforest", "mean_mode"], [0.1], 3, seed=12,
            mf_config=MissForestConfig(forest=ForestParams(n_tree=4)),
        )
        assert (
            solo.results["mean_mode"]["0.1"]["nrmse"]
            == both.results["mean_mode"]["0.1"]["nrmse"]
        )

    def test_method_failure_recorded_not_fatal(self):
        # 30 rows, p=2: knn candidates all >= encoded width fail per sim,
        # mean_mode still succeeds
        rng = np.random.default_rng(5)
        x = _cont_matrix(rng.normal(size=(30, 2)))
        report = run_benchmark(
            x, ["knn_cv", "mean_mode"], [0.1], 2, seed=13,
            knn_config=KnnConfig(k_candidates=(5, 9)),
        )
        assert len(report.errors) == 2
        assert all(e["method"] == "knn_cv" for e in report.errors)
        assert report.results["knn_cv"]["0.1"]["nrmse"] == [None, None]
        assert all(
            v is not None for v in report.results["mean_mode"]["0.1"]["nrmse"]
        )

    def test_incomplete_truth_rejected(self):
        x = MixedMatrix(
            np.array([[1.0, np.nan]]), np.array([[False, True]]),
            (Variable("a", CONT), Variable("b", CONT)),
        )
        with pytest.raises(ValueError, match="complete"):
            run_benchmark(x, ["mean_mode"], [0.1], 1, seed=1)

    def test_unknown_method_rejected(self):
        x = datagen.continuous_gaussian(n=20, p=3, seed=6)
        with pytest.raises(ValueError, match="unknown method"):
            run_benchmark(x, ["magic"], [0.1], 1, seed=1)

    def test_csv_shape(self):
        x = datagen.continuous_gaussian(n=30, p=3, seed=7)
        report = run_benchmark(x, ["mean_mode"], [0.1, 0.3], 4, seed=14)
        lines = report.to_csv().strip().split("\n")
        assert lines[0] == "method,fraction,simulation,nrmse,pfc"
        assert len(lines) == 1 + 2 * 4


class TestRunSweep:
    def test_single_cell_matches_benchmark(self):
        # the sweep derives mask and forest seeds exactly like the
        # benchmark's missforest arm, so a 1x1 grid must agree per sim
        x = datagen.mixed_structured(n=40, seed=8)
        mf = MissForestConfig(forest=ForestParams(n_tree=10, m_try=2))
        sweep = run_sweep(x, 0.1, [10], [2], n_simulations=3, seed=21, mf_config=mf)
        bench = run_benchmark(
            x, ["missforest"], [0.1], 3, seed=21, mf_config=mf
        )
        assert (
            sweep.cells["10"]["2"]["nrmse"]
            == bench.results["missforest"]["0.1"]["nrmse"]
        )
        assert (
            sweep.cells["10"]["2"]["pfc"]
            == bench.results["missforest"]["0.1"]["pfc"]
        )

    def test_grid_complete(self):
        x = datagen.continuous_gaussian(n=30, p=4, seed=9)
        sweep = run_sweep(x, 0.1, [5, 10], [1, 2], 2, seed=22)
        assert set(sweep.cells) == {"5", "10"}
        for nt in ("5", "10"):
            assert set(sweep.cells[nt]) == {"1", "2"}
            for mt in ("1", "2"):
                assert len(sweep.cells[nt][mt]["nrmse"]) == 2
                assert len(sweep.runtimes[nt][mt]) == 2
                assert min(sweep.runtimes[nt][mt]) > 0

    def test_json_omits_runtimes_csv_carries_them(self):
        x = datagen.continuous_gaussian(n=30, p=4, seed=10)
        sweep = run_sweep(x, 0.1, [5], [1], 1, seed=23)
        assert "runtime" not in sweep.to_json()
        header = sweep.to_csv().split("\n", 1)[0]
        assert "runtime_seconds" in header

    def test_invalid_mtry_rejected(self):
        x = datagen.continuous_gaussian(n=30, p=4, seed=11)
        with pytest.raises(ValueError, match="m_try"):
            run_sweep(x, 0.1, [5], [0], 1, seed=1)
        with pytest.raises(ValueError, match="m_try"):
            run_sweep(x, 0.1, [5], [4], 1, seed=1)   # only p-1=3 predictors
