"""Banded operator matrices: entry formulas, composition, and solves."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from hspde.hermite import basis_vector, norm_p, sobolev_weights, weight_array
from hspde.operators import (
    A_matrices,
    BandMatrix,
    BandedLU,
    DriftSolver,
    L_matrix,
    OperatorParams,
    compose,
    d1_matrix,
    d2_matrix,
    d3_matrix,
    d4_matrix,
    identity_matrix,
    is_diagonally_dominant,
)

SQ2 = np.sqrt(2.0)


def band_entry(mat, row, col):
    return mat.to_dense()[row, col]


class TestDerivativeMatrices:
    def test_d1_smallest_case(self):
        m = d1_matrix(1, exact=True)
        assert (m.rows, m.cols) == (2, 1)
        dense = m.to_dense()
        assert_allclose(dense[:, 0], [0.0, -np.sqrt(0.5)], rtol=1e-15)

    def test_d1_applied_to_e1(self):
        out = d1_matrix(4).apply(basis_vector(1, 4))
        expected = np.zeros(5)
        expected[0] = np.sqrt(0.5)
        expected[2] = -1.0
        assert_allclose(out, expected, rtol=1e-15, atol=0)

    def test_d1_zero_vector(self):
        assert_allclose(d1_matrix(6).apply(np.zeros(6)), np.zeros(7), atol=0)

    def test_d2_column_zero(self):
        m = d2_matrix(3)
        assert_allclose(band_entry(m, 0, 0), -0.5, rtol=1e-15)
        assert_allclose(band_entry(m, 2, 0), SQ2 / 2, rtol=1e-15)
        assert band_entry(m, 1, 0) == 0.0

    def test_d3_applied_to_e0(self):
        out = d3_matrix(2).apply(basis_vector(0, 2))
        expected = np.zeros(5)
        expected[1] = 3.0 / (2.0 * SQ2)
        expected[3] = -np.sqrt(6.0) / (2.0 * SQ2)
        assert_allclose(out, expected, rtol=1e-15, atol=0)

    def test_d4_column_zero(self):
        m = d4_matrix(3)
        assert_allclose(band_entry(m, 0, 0), 0.75, rtol=1e-15)
        assert_allclose(band_entry(m, 2, 0), -3.0 * SQ2 / 2.0, rtol=1e-15)
        assert_allclose(band_entry(m, 4, 0), np.sqrt(24.0) / 4.0, rtol=1e-15)

    def test_galerkin_forms_are_square_truncations(self):
        for builder, order in ((d1_matrix, 1), (d2_matrix, 2), (d3_matrix, 3), (d4_matrix, 4)):
            exact = builder(6, exact=True)
            squ = builder(6, exact=False)
            assert exact.rows == 6 + order and squ.rows == 6
            assert_allclose(squ.to_dense(), exact.to_dense()[:6, :], atol=0)


class TestDriftAndNoiseOperators:
    def test_L_reduces_to_d2(self):
        L = L_matrix(OperatorParams(kappa=0.0, sigma=SQ2, b=0.0), 5)
        assert_allclose(L.to_dense()[:7, :], d2_matrix(5).to_dense(), rtol=1e-15)

    def test_L_all_zero(self):
        L = L_matrix(OperatorParams(kappa=0.0, sigma=0.0, b=0.0), 4)
        assert_allclose(L.to_dense(), np.zeros((8, 4)), atol=0)

    def test_L_pure_fourth_order_column_zero(self):
        L = L_matrix(OperatorParams(kappa=1.0, sigma=0.0, b=0.0), 3)
        assert_allclose(band_entry(L, 0, 0), -3.0 / 8.0, rtol=1e-15)
        assert_allclose(band_entry(L, 2, 0), 3.0 * SQ2 / 4.0, rtol=1e-15)
        assert_allclose(band_entry(L, 4, 0), -np.sqrt(24.0) / 8.0, rtol=1e-15)

    def test_noise_operators(self):
        a1, a2 = A_matrices(OperatorParams(kappa=2.0, sigma=1.0, b=0.0), 3)
        out = a1.apply(basis_vector(0, 3))
        expected = np.zeros(4)
        expected[1] = np.sqrt(0.5)
        assert_allclose(out, expected, rtol=1e-15, atol=0)
        assert_allclose(band_entry(a2, 0, 0), -1.0, rtol=1e-15)
        assert_allclose(band_entry(a2, 2, 0), SQ2, rtol=1e-15)

    def test_noise_operators_vanish(self):
        a1, a2 = A_matrices(OperatorParams(kappa=0.0, sigma=0.0, b=0.0), 4)
        assert not a1.bands and not a2.bands

    def test_params_validation(self):
        with pytest.raises(ValueError):
            OperatorParams(kappa=np.nan)


class TestComposition:
    def test_d1_squared_is_d2(self):
        N = 16
        prod = compose(d1_matrix(N + 1), d1_matrix(N)).to_dense()
        ref = d2_matrix(N).to_dense()
        assert np.max(np.abs(prod - ref)) <= 1e-13 * np.max(np.abs(ref))

    @pytest.mark.parametrize("N", [4, 16, 64, 256])
    def test_iterated_first_derivative(self, N):
        m = d1_matrix(N)
        for k in range(3):
            m = compose(d1_matrix(N + k + 1), m)
        ref = d4_matrix(N).to_dense()
        assert np.max(np.abs(m.to_dense() - ref)) <= 1e-13 * np.max(np.abs(ref))
        m3 = compose(d1_matrix(N + 2), compose(d1_matrix(N + 1), d1_matrix(N)))
        ref3 = d3_matrix(N).to_dense()
        assert np.max(np.abs(m3.to_dense() - ref3)) <= 1e-13 * np.max(np.abs(ref3))

    def test_identity_composition(self):
        m = d2_matrix(8)
        left = compose(identity_matrix(10), m)
        assert_allclose(left.to_dense(), m.to_dense(), atol=0)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="compose"):
            compose(d1_matrix(4), d1_matrix(6))


class TestBandMatrixBasics:
    def test_apply_matches_dense_oracle(self):
        rng = np.random.default_rng(5)
        for N in (3, 8, 32):
            for mat in (d1_matrix(N), d3_matrix(N), L_matrix(OperatorParams(1.0, 2.0, -0.5), N)):
                u = rng.normal(size=N)
                assert_allclose(mat.apply(u), mat.to_dense() @ u, rtol=1e-13, atol=1e-13)

    def test_apply_batched_rows(self):
        rng = np.random.default_rng(6)
        mat = d2_matrix(10)
        X = rng.normal(size=(7, 10))
        out = mat.apply(X)
        for i in range(7):
            assert_allclose(out[i], mat.apply(X[i]), atol=0)

    def test_json_round_trip(self):
        mat = L_matrix(OperatorParams(1.0, 1.0, 2.0), 5)
        clone = BandMatrix.from_json(mat.to_json())
        assert clone.rows == mat.rows and clone.cols == mat.cols
        assert_allclose(clone.to_dense(), mat.to_dense(), atol=0)

    def test_out_of_range_band_entries_are_dropped(self):
        mat = BandMatrix(3, 3, {2: np.array([1.0, 2.0, 3.0])})
        dense = mat.to_dense()
        assert dense[2, 0] == 1.0
        assert np.count_nonzero(dense) == 1

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            BandMatrix(3, 3, {0: np.ones(4)})


class TestSkewSymmetry:
    def test_first_derivative_is_skew_on_interior_modes(self):
        N = 12
        D = d1_matrix(N, exact=False)
        w0 = sobolev_weights(0.0, N)
        rng = np.random.default_rng(2)
        u = np.concatenate([rng.normal(size=N - 1), [0.0]])
        v = np.concatenate([rng.normal(size=N - 1), [0.0]])
        from hspde.hermite import inner_p

        lhs = inner_p(u, D.apply(v), w0)
        rhs = -inner_p(D.apply(u), v, w0)
        assert_allclose(lhs, rhs, rtol=1e-13, atol=1e-13)


class TestRegularityLossBounds:
    """Operator norms measured between weighted norms of shifted index.

    The first derivative loses half an order, the second a full order, and
    the drift operator two orders; the measured constants must not grow with
    the truncation.
    """

    @staticmethod
    def _norm_constant(mat, p_out, p_in, N):
        dense = mat.to_dense()
        w_out = weight_array(p_out, dense.shape[0])
        w_in = weight_array(p_in, N)
        B = (np.sqrt(w_out)[:, None] * dense) / np.sqrt(w_in)[None, :]
        return np.linalg.norm(B, 2)

    @pytest.mark.parametrize("p", [-1.0, 0.0, 1.0])
    def test_constants_stabilize_with_N(self, p):
        params = OperatorParams(kappa=1.0, sigma=1.0, b=2.0)
        Ns = (32, 64, 128, 256)
        k1 = [self._norm_constant(A_matrices(params, N)[0], p - 0.5, p, N) for N in Ns]
        k2 = [self._norm_constant(A_matrices(params, N)[1], p - 1.0, p, N) for N in Ns]
        k3 = [self._norm_constant(L_matrix(params, N), p - 2.0, p, N) for N in Ns]
        for seq in (k1, k2, k3):
            assert np.all(np.diff(seq) >= -1e-10)  # nested maximization
            assert abs(seq[-1] - seq[-2]) <= 1e-3 * seq[-1]


class TestBandedSolvers:
    @staticmethod
    def _dominant_system(N, seed):
        rng = np.random.default_rng(seed)
        bands = {}
        off = np.zeros(N)
        for d in (-3, -1, 1, 2):
            vals = rng.uniform(-1.0, 1.0, N)
            bands[d] = vals
            lo, hi = max(0, -d), min(N, N - d)
            rows = np.arange(lo, hi) + d
            off[rows] += np.abs(vals[lo:hi])
        bands[0] = off + rng.uniform(0.5, 1.5, N)
        return BandMatrix(N, N, bands)

    def test_banded_lu_matches_dense_solve(self):
        for seed in range(4):
            mat = self._dominant_system(24, seed)
            lu = BandedLU(mat)
            rng = np.random.default_rng(100 + seed)
            rhs = rng.normal(size=24)
            assert_allclose(lu.solve(rhs), np.linalg.solve(mat.to_dense(), rhs), rtol=1e-11)

    def test_banded_lu_batch_is_columnwise_identical(self):
        mat = self._dominant_system(16, 9)
        lu = BandedLU(mat)
        rng = np.random.default_rng(42)
        batch = rng.normal(size=(5, 16))
        solved = lu.solve(batch)
        for i in range(5):
            single = lu.solve(batch[i])
            assert solved[i].tobytes() == single.tobytes()

    def test_dominance_check(self):
        assert is_diagonally_dominant(self._dominant_system(10, 1))
        weak = BandMatrix(4, 4, {0: np.ones(4), 1: np.full(4, 2.0)})
        assert not is_diagonally_dominant(weak)

    def test_drift_solver_dense_fallback_agrees(self):
        N = 20
        bands = {0: np.ones(N), 2: np.full(N, 3.0), -1: np.full(N, 0.25)}
        system = BandMatrix(N, N, bands)
        assert not is_diagonally_dominant(system)
        solver = DriftSolver(system)
        assert not solver.banded
        rng = np.random.default_rng(3)
        rhs = rng.normal(size=N)
        assert_allclose(solver.solve(rhs), np.linalg.solve(system.to_dense(), rhs), rtol=1e-10)

    def test_drift_solver_banded_path(self):
        system = self._dominant_system(12, 7)
        solver = DriftSolver(system)
        assert solver.banded
        rhs = np.arange(12, dtype=float)
        assert_allclose(solver.solve(rhs), np.linalg.solve(system.to_dense(), rhs), rtol=1e-11)


class TestShiftBoundInNorms:
    def test_A1_bounded_between_adjacent_indices(self):
        params = OperatorParams(kappa=0.0, sigma=1.0, b=0.0)
        N = 64
        a1 = A_matrices(params, N)[0]
        rng = np.random.default_rng(8)
        w_in = sobolev_weights(1.0, N)
        w_out = sobolev_weights(0.5, N + 1)
        const = TestRegularityLossBounds._norm_constant(a1, 0.5, 1.0, N)
        for _ in range(50):
            u = rng.normal(size=N)
            assert norm_p(a1.apply(u), w_out) <= const * norm_p(u, w_in) * (1 + 1e-10)
