"""Model fitting and fiducial mass tests."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from easelect import (
    AllInadmissible,
    Dataset,
    GfWeight,
    ModelIndexSet,
    fit_model,
    log_gf_mass,
    normalize_masses,
)
from easelect.matstat import log_multivariate_gamma


def _random_dataset(seed, n=30, p=5, q=2, noise=1.0):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((p, n))
    b = rng.standard_normal((q, p))
    y = b @ x + noise * rng.standard_normal((q, n))
    return Dataset(y, x)


class TestModelIndexSet:
    def test_sorts_on_construction(self):
        m = ModelIndexSet.of([5, 1, 3])
        assert m.indices == (1, 3, 5)
        assert np.array_equal(m.row_indexer, [0, 2, 4])

    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            ModelIndexSet.of([2, 2, 3])

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            ModelIndexSet.of([0, 1])

    def test_add_remove(self):
        m = ModelIndexSet.of([2, 4])
        assert m.with_added(3).indices == (2, 3, 4)
        assert m.with_removed(2).indices == (4,)

    @given(st.sets(st.integers(min_value=1, max_value=40), min_size=1, max_size=8))
    @settings(max_examples=50, deadline=None)
    def test_order_invariance(self, idx):
        ordered = ModelIndexSet.of(sorted(idx))
        shuffled = ModelIndexSet.of(reversed(sorted(idx)))
        assert ordered == shuffled


class TestDataset:
    def test_validates_shapes(self):
        with pytest.raises(ValueError):
            Dataset(np.zeros((2, 5)), np.zeros((3, 6)))

    def test_rejects_nonfinite(self):
        y = np.zeros((1, 4))
        x = np.zeros((2, 4))
        x[0, 0] = np.inf
        with pytest.raises(ValueError):
            Dataset(y, x)

    def test_cached_moments(self):
        data = _random_dataset(0)
        assert np.allclose(data.gram, data.x @ data.x.T)
        assert np.allclose(data.yxt, data.y @ data.x.T)
        assert np.allclose(data.yyt, data.y @ data.y.T)

    def test_lambda_max_matches_eigh(self):
        data = _random_dataset(1, n=25, p=8)
        exact = np.linalg.eigvalsh(data.gram)[-1]
        assert data.gram_lambda_max == pytest.approx(exact, rel=1e-6)

    def test_center(self):
        data = _random_dataset(2)
        c = data.center()
        assert c.centered
        assert np.max(np.abs(c.y.mean(axis=1))) < 1e-12
        assert np.max(np.abs(c.x.mean(axis=1))) < 1e-12


class TestFitModel:
    def test_noiseless_exact_fit(self):
        rng = np.random.default_rng(3)
        # Orthonormal predictor rows via QR.
        q_mat, _ = np.linalg.qr(rng.standard_normal((20, 3)))
        x = np.zeros((5, 20))
        x[[1, 2, 4], :] = q_mat.T
        x[[0, 3], :] = rng.standard_normal((2, 20))
        b0 = rng.standard_normal((2, 3))
        y = b0 @ x[[1, 2, 4]]
        data = Dataset(y, x)
        fitted = fit_model(data, ModelIndexSet.of([2, 3, 5]))
        assert fitted.full_rank
        assert np.allclose(fitted.b_hat, b0, atol=1e-10)
        assert fitted.log_det_sigma == float("-inf")
        assert fitted.sigma_factor is None

    def test_duplicate_rows_flag_rank_deficient(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal((4, 15))
        x[3] = x[1]
        y = rng.standard_normal((2, 15))
        fitted = fit_model(Dataset(y, x), ModelIndexSet.of([2, 4]))
        assert not fitted.full_rank
        assert fitted.b_hat is None
        assert fitted.log_det_sigma == float("-inf")

    def test_matches_pseudoinverse_oracle(self):
        data = _random_dataset(5, n=30, p=5, q=2)
        model = ModelIndexSet.of([1, 2, 4])
        fitted = fit_model(data, model)
        # Independent SVD-based solve.
        xm = data.x[model.row_indexer]
        b_oracle = data.y @ np.linalg.pinv(xm)
        assert np.max(np.abs(fitted.b_hat - b_oracle)) < 1e-8

    def test_sigma_matches_hat_matrix_route(self):
        for seed in range(4):
            data = _random_dataset(10 + seed, n=60, p=8, q=3)
            model = ModelIndexSet.of([1, 3, 6, 8])
            fitted = fit_model(data, model)
            xm = data.x[model.row_indexer]
            hat = xm.T @ np.linalg.solve(xm @ xm.T, xm)
            sigma_explicit = data.y @ (np.eye(data.n) - hat) @ data.y.T
            assert np.allclose(
                fitted.sigma_factor.matrix(), sigma_explicit, rtol=1e-6, atol=1e-8
            )

    def test_nested_models_shrink_determinant(self):
        rng = np.random.default_rng(20)
        for seed in range(5):
            data = _random_dataset(30 + seed, n=40, p=6, q=2)
            small = ModelIndexSet.of([1, 4])
            big = ModelIndexSet.of([1, 2, 4, 5])
            ld_small = fit_model(data, small).log_det_sigma
            ld_big = fit_model(data, big).log_det_sigma
            assert ld_big <= ld_small + 1e-10

    def test_index_out_of_range(self):
        data = _random_dataset(6)
        with pytest.raises(ValueError):
            fit_model(data, ModelIndexSet.of([1, 99]))


class TestLogGfMass:
    def test_h_zero_annihilates(self):
        data = _random_dataset(7)
        fitted = fit_model(data, ModelIndexSet.of([1, 2]))
        w = log_gf_mass(fitted, 0, data.n, data.q)
        assert w.log_mass == float("-inf")
        assert not w.admissible

    def test_size_indicator(self):
        # |M| >= n - q forces zero mass even with h = 1.
        rng = np.random.default_rng(8)
        n, p, q = 6, 5, 2
        x = rng.standard_normal((p, n))
        y = rng.standard_normal((q, n))
        data = Dataset(y, x)
        fitted = fit_model(data, ModelIndexSet.of([1, 2, 3, 4]))
        assert log_gf_mass(fitted, 1, n, q).log_mass == float("-inf")

    def test_mass_ratio_matches_determinant_oracle(self):
        data = _random_dataset(9, n=25, p=4, q=2)
        m1 = ModelIndexSet.of([1, 2])
        m2 = ModelIndexSet.of([3, 4])
        f1, f2 = fit_model(data, m1), fit_model(data, m2)
        w1 = log_gf_mass(f1, 1, data.n, data.q)
        w2 = log_gf_mass(f2, 1, data.n, data.q)
        # Dense determinant oracle, no Cholesky involved.
        def sigma_det(model):
            xm = data.x[model.row_indexer]
            hat = xm.T @ np.linalg.solve(xm @ xm.T, xm)
            return np.linalg.det(data.y @ (np.eye(data.n) - hat) @ data.y.T)

        exponent = (data.n - m1.size - data.q) / 2.0
        expected = exponent * (math.log(sigma_det(m1)) - math.log(sigma_det(m2)))
        assert w2.log_mass - w1.log_mass == pytest.approx(expected, rel=1e-8)

    def test_monotone_in_log_det(self):
        data = _random_dataset(11, n=40, p=6, q=2)
        fits = [fit_model(data, ModelIndexSet.of(m)) for m in ([1, 2], [3, 5], [4, 6])]
        masses = [log_gf_mass(f, 1, data.n, data.q).log_mass for f in fits]
        dets = [f.log_det_sigma for f in fits]
        order_by_det = np.argsort(dets)
        order_by_mass = np.argsort(masses)[::-1]
        assert np.array_equal(order_by_det, order_by_mass)

    def test_formula_against_direct_evaluation(self):
        data = _random_dataset(12, n=30, p=5, q=2)
        model = ModelIndexSet.of([2, 5])
        fitted = fit_model(data, model)
        w = log_gf_mass(fitted, 1, data.n, data.q)
        m = model.size
        expected = (
            log_multivariate_gamma(data.q, (data.n - m) / 2.0)
            + 0.5 * data.q * m * math.log(math.pi)
            - 0.5 * (data.n - m - data.q) * fitted.log_det_sigma
        )
        assert w.log_mass == pytest.approx(expected, rel=1e-12)


class TestNormalizeMasses:
    def test_single_finite(self):
        probs = normalize_masses(
            [GfWeight(-5.0, True), GfWeight(float("-inf"), False)]
        )
        assert probs[0] == pytest.approx(1.0)
        assert probs[1] == 0.0

    def test_two_equal(self):
        probs = normalize_masses([GfWeight(2.0, True), GfWeight(2.0, True)])
        assert np.allclose(probs, [0.5, 0.5])

    def test_log1_log3(self):
        probs = normalize_masses(
            [GfWeight(math.log(1.0), True), GfWeight(math.log(3.0), True)]
        )
        assert np.allclose(probs, [0.25, 0.75])

    def test_all_inadmissible(self):
        with pytest.raises(AllInadmissible):
            normalize_masses([GfWeight(float("-inf"), False)])

    @given(
        st.lists(
            st.floats(min_value=-300, max_value=300, allow_nan=False),
            min_size=1,
            max_size=12,
        )
    )
    @settings(max_examples=60, deadline=None)
    def test_sums_to_one(self, logs):
        probs = normalize_masses([GfWeight(v, True) for v in logs])
        assert abs(probs.sum() - 1.0) < 1e-12
        assert np.all(probs >= 0)

    def test_gfweight_invariant(self):
        with pytest.raises(ValueError):
            GfWeight(1.0, False)
