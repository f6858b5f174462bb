"""Basis evaluation, quadrature, projection, and weighted norm tests."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from hspde.hermite import (
    HERMITE_INDEX_CAP,
    QUADRATURE_COUNT_CAP,
    basis_vector,
    coeffs_from_json,
    coeffs_to_json,
    gauss_hermite_rule,
    hermite_eval,
    hermite_matrix,
    inner_p,
    norm_p,
    project,
    shift_down,
    sobolev_weights,
)

# extended-precision recurrence oracle values (40 decimal digits, rounded)
H40_AT_1 = -0.24103276225385367
H12_AT_3P5 = -0.40810784944138356
H7_AT_M2P25 = 0.4198031729331273


def test_h1_vanishes_at_origin():
    assert hermite_eval(1, 0.0) == 0.0


def test_h0_at_origin():
    assert_allclose(hermite_eval(0, 0.0), np.pi**-0.25, rtol=1e-15)


def test_high_order_values_match_extended_precision_oracle():
    v = hermite_eval(40, 1.0)
    assert abs(v) < 1.0
    assert_allclose(v, H40_AT_1, atol=1e-12)
    assert_allclose(hermite_eval(12, 3.5), H12_AT_3P5, atol=1e-12)
    assert_allclose(hermite_eval(7, -2.25), H7_AT_M2P25, atol=1e-12)


def test_live_mpmath_oracle_agrees():
    mp_mod = pytest.importorskip("mpmath")
    mp = mp_mod.mp
    mp.dps = 40
    t = mp_mod.mpf("0.731")
    prev, h = mp_mod.mpf(0), mp_mod.pi ** mp_mod.mpf("-0.25") * mp_mod.exp(-t * t / 2)
    for m in range(25):
        h, prev = t * mp_mod.sqrt(mp_mod.mpf(2) / (m + 1)) * h - mp_mod.sqrt(
            mp_mod.mpf(m) / (m + 1)
        ) * prev, h
    assert_allclose(hermite_eval(25, 0.731), float(h), rtol=1e-12)


def test_index_cap_and_bad_arguments():
    with pytest.raises(ValueError):
        hermite_eval(HERMITE_INDEX_CAP + 1, 0.0)
    with pytest.raises(ValueError):
        hermite_eval(-1, 0.0)
    with pytest.raises(ValueError):
        hermite_eval(3, np.inf)


def test_hermite_matrix_matches_scalar_eval():
    x = np.array([-2.0, -0.5, 0.0, 1.3])
    H = hermite_matrix(6, x)
    for k in range(6):
        for j, t in enumerate(x):
            assert_allclose(H[k, j], hermite_eval(k, t), rtol=1e-14, atol=1e-300)


class TestGaussHermiteRule:
    def test_one_point(self):
        rule = gauss_hermite_rule(1)
        assert_allclose(rule.nodes, [0.0], atol=0)
        assert_allclose(rule.weights, [np.sqrt(np.pi)], rtol=1e-15)

    def test_two_point(self):
        rule = gauss_hermite_rule(2)
        assert_allclose(rule.nodes, [-1 / np.sqrt(2), 1 / np.sqrt(2)], rtol=1e-15)
        assert_allclose(rule.weights, [np.sqrt(np.pi) / 2] * 2, rtol=1e-14)

    def test_count_cap(self):
        with pytest.raises(ValueError):
            gauss_hermite_rule(QUADRATURE_COUNT_CAP + 1)
        with pytest.raises(ValueError):
            gauss_hermite_rule(0)

    @pytest.mark.parametrize("count", [3, 20, 200])
    def test_node_and_weight_structure(self, count):
        rule = gauss_hermite_rule(count)
        assert np.all(np.diff(rule.nodes) > 0)
        assert_allclose(rule.nodes, -rule.nodes[::-1], atol=1e-14)
        assert np.all(rule.weights > 0)
        assert np.all(rule.scaled_weights > 0)

    def test_scaled_weights_match_direct_product(self):
        rule = gauss_hermite_rule(80)
        assert_allclose(rule.scaled_weights, rule.weights * np.exp(rule.nodes**2), rtol=1e-11)

    def test_large_rule_scaled_weights_stay_finite(self):
        rule = gauss_hermite_rule(1024)
        assert np.all(np.isfinite(rule.scaled_weights))
        assert np.all(rule.scaled_weights > 0)


class TestProjection:
    def test_projecting_a_basis_function_recovers_it(self):
        rule = gauss_hermite_rule(64)
        coeffs = project(lambda x: hermite_matrix(4, x)[3], 8, rule)
        expected = np.zeros(8)
        expected[3] = 1.0
        assert_allclose(coeffs, expected, atol=1e-10)

    def test_zero_function(self):
        rule = gauss_hermite_rule(16)
        assert_allclose(project(lambda x: np.zeros_like(x), 5, rule), np.zeros(5), atol=0)

    def test_standard_gaussian_density(self):
        # equals 2**-0.5 * pi**-0.25 times the ground basis function
        rule = gauss_hermite_rule(200)
        coeffs = project(lambda x: np.exp(-0.5 * x * x) / np.sqrt(2 * np.pi), 16, rule)
        expected = np.zeros(16)
        expected[0] = 0.5311259660135984
        assert_allclose(coeffs, expected, atol=1e-10)
        assert np.all(np.abs(coeffs[1::2]) < 1e-14)

    def test_wider_gaussian_matches_extended_precision_quadrature(self):
        rule = gauss_hermite_rule(200)
        coeffs = project(
            lambda x: np.exp(-x * x / 4.0) / np.sqrt(4.0 * np.pi), 12, rule
        )
        oracle = [0.43366253529203874, 0.0, 0.1022152398171837, 0.0,
                  0.02950699811186658, 0.0, 0.008978693594517596, 0.0,
                  0.002799599600958886, 0.0, 0.0008853111275528594, 0.0]
        assert_allclose(coeffs, oracle, atol=1e-10)

    def test_non_finite_integrand_names_the_node(self):
        rule = gauss_hermite_rule(8)
        bad = float(rule.nodes[3])
        with pytest.raises(ValueError, match=repr(bad)):
            project(lambda x: 1.0 / (x - bad), 4, rule)

    def test_orthonormality_200_node_rule(self):
        rule = gauss_hermite_rule(200)
        H = hermite_matrix(41, rule.nodes)
        gram = (H * rule.scaled_weights) @ H.T
        assert np.max(np.abs(gram - np.eye(41))) <= 1e-10


class TestWeightedInnerProduct:
    def test_unit_vector_weight(self):
        e2 = basis_vector(2, 6)
        w = sobolev_weights(1.0, 6)
        assert_allclose(inner_p(e2, e2, w), 25.0, rtol=1e-14)

    def test_disjoint_support(self):
        u = np.array([1.0, 0.0, 2.0, 0.0])
        v = np.array([0.0, 3.0, 0.0, 4.0])
        assert inner_p(u, v, sobolev_weights(0.7, 4)) == 0.0

    def test_p_zero_is_plain_dot(self):
        rng = np.random.default_rng(7)
        u, v = rng.normal(size=10), rng.normal(size=10)
        w = sobolev_weights(0.0, 10)
        assert_allclose(inner_p(u, v, w), float(u @ v), rtol=1e-14)

    def test_zero_padding_of_shorter_vector(self):
        w = sobolev_weights(1.0, 8)
        u = np.array([1.0, 2.0])
        v = np.array([3.0, 4.0, 5.0, 6.0])
        assert_allclose(inner_p(u, v, w), 1 * 3 + 9 * 2 * 4, rtol=1e-14)

    def test_weight_coverage_enforced(self):
        with pytest.raises(ValueError, match="weights cover"):
            inner_p(np.ones(5), np.ones(5), sobolev_weights(1.0, 4))

    @given(st.integers(min_value=0, max_value=6))
    def test_bilinear_and_symmetric(self, shift):
        rng = np.random.default_rng(shift)
        u, v, z = rng.normal(size=(3, 9))
        w = sobolev_weights(0.75, 9)
        assert_allclose(inner_p(u, v, w), inner_p(v, u, w), rtol=1e-13)
        assert_allclose(
            inner_p(u + 2.0 * z, v, w),
            inner_p(u, v, w) + 2.0 * inner_p(z, v, w),
            rtol=1e-12, atol=1e-12,
        )


class TestNormOrderingAndDuality:
    def test_ground_mode_norm_is_one_for_every_p(self):
        e0 = basis_vector(0, 4)
        for p in (-2.0, -0.5, 0.0, 1.0, 3.0):
            assert_allclose(norm_p(e0, sobolev_weights(p, 4)), 1.0, rtol=1e-14)

    def test_e2_norms(self):
        e2 = basis_vector(2, 4)
        assert_allclose(norm_p(e2, sobolev_weights(1.0, 4)), 5.0, rtol=1e-14)
        assert_allclose(norm_p(e2, sobolev_weights(-1.0, 4)), 0.2, rtol=1e-13)

    def test_norms_increase_in_p_off_the_ground_mode(self):
        rng = np.random.default_rng(3)
        u = np.concatenate([[0.0], rng.uniform(0.5, 1.0, 7)])
        ps = [-1.5, -0.5, 0.0, 0.5, 1.5]
        vals = [norm_p(u, sobolev_weights(p, 8)) for p in ps]
        assert np.all(np.diff(vals) > 0)

    @settings(max_examples=30)
    @given(
        st.floats(min_value=0.0, max_value=2.5),
        st.integers(min_value=0, max_value=10_000),
    )
    def test_duality_pairing_bound(self, p, seed):
        rng = np.random.default_rng(seed)
        u, v = rng.normal(size=(2, 12))
        w0 = sobolev_weights(0.0, 12)
        lhs = abs(inner_p(u, v, w0))
        rhs = norm_p(u, sobolev_weights(p, 12)) * norm_p(v, sobolev_weights(-p, 12))
        assert lhs <= rhs * (1.0 + 1e-12)


class TestShift:
    def test_examples(self):
        assert_allclose(shift_down(basis_vector(5, 8), 2), basis_vector(3, 8), atol=0)
        assert_allclose(shift_down(basis_vector(2, 8), 4), np.zeros(8), atol=0)
        u = np.arange(1.0, 6.0)
        assert_allclose(shift_down(u, 0), u, atol=0)

    def test_contraction_for_nonnegative_p(self):
        rng = np.random.default_rng(11)
        u = rng.normal(size=16)
        for p in (0.0, 0.5, 2.0):
            w = sobolev_weights(p, 16)
            for m in (1, 3, 5):
                assert norm_p(shift_down(u, m), w) <= norm_p(u, w) * (1 + 1e-13)

    def test_norm_bound_for_negative_p(self):
        rng = np.random.default_rng(12)
        u = rng.normal(size=16)
        k = np.arange(16)
        for p in (-0.5, -1.5):
            w = sobolev_weights(p, 16)
            for m in (1, 2, 4):
                bound = np.sqrt(np.max(((2 * k + 1.0) / (2 * k + 2 * m + 1.0)) ** (2 * p)))
                assert norm_p(shift_down(u, m), w) <= bound * norm_p(u, w) * (1 + 1e-13)


def test_coeff_json_round_trip():
    u = np.array([0.25, -1.5, 3.0])
    assert_allclose(coeffs_from_json(coeffs_to_json(u)), u, atol=0)
    with pytest.raises(ValueError):
        coeffs_from_json([1.0, float("nan")])
