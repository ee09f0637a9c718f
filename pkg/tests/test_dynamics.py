import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hyperod.dynamics import (AffineTorusMap, PhasePoint, StandardMap, map_from_json,
                              wrap_coords, wrap_nearest_delta)

from conftest import random_points

TWO_PI = 2.0 * math.pi


def torus_dist(a, b, periods):
    return float(np.max(np.abs(wrap_nearest_delta(np.asarray(a) - np.asarray(b), periods))))


class TestStandardMap:
    def test_eval_reference_point(self, standard_map):
        # hand evaluation: yb = -0.5*sin(3), xb = 3 + yb, both mod 2*pi
        out = standard_map.eval(0.5, standard_map.point([3.0, 0.0]))
        assert out.coords[0] == pytest.approx(2.929440, abs=1e-6)
        assert out.coords[1] == pytest.approx(6.212625, abs=1e-6)
        yb = -0.5 * math.sin(3.0)
        assert out.coords[0] == pytest.approx(3.0 + yb, abs=1e-15)
        assert out.coords[1] == pytest.approx(yb % TWO_PI, abs=1e-15)

    def test_inverse_round_trip_reference(self, standard_map):
        x = standard_map.point([3.0, 0.0])
        back = standard_map.inverse_eval(0.5, standard_map.eval(0.5, x))
        assert torus_dist(back.coords, x.coords, standard_map.periods) < 1e-12

    def test_jac_reference_point(self, standard_map):
        J = standard_map.jac_x(0.5, standard_map.point([3.0, 0.0]))
        kc = 0.5 * math.cos(3.0)
        assert np.allclose(J, [[1.0 - kc, 1.0], [-kc, 1.0]], atol=0)
        assert J[0, 0] == pytest.approx(1.494996, abs=1e-6)
        assert J[1, 0] == pytest.approx(0.494996, abs=1e-6)

    def test_jac_k_reference_and_zero(self, standard_map):
        dk = standard_map.jac_k(0.5, standard_map.point([3.0, 0.0]))
        assert dk == pytest.approx([-0.141120, -0.141120], abs=1e-6)
        assert np.all(standard_map.jac_k(0.7, standard_map.point([0.0, 1.3])) == 0.0)

    def test_area_preservation(self, standard_map):
        rng = np.random.default_rng(7)
        for k, x in random_points(standard_map, rng, 100):
            assert abs(np.linalg.det(standard_map.jac_x(k, x))) == pytest.approx(1.0, abs=1e-12)

    def test_jac_x_inv_is_inverse(self, standard_map):
        rng = np.random.default_rng(8)
        for k, x in random_points(standard_map, rng, 50):
            J = standard_map.jac_x(k, x)
            Ji = standard_map.jac_x_inv(k, x)
            assert np.allclose(J @ Ji, np.eye(2), atol=1e-14)


class TestAffineTorusMap:
    def test_eval_matrix_vector(self, cat_map):
        out = cat_map.eval(0.0, cat_map.point([0.1, 0.2]))
        assert out.coords == pytest.approx([0.4, 0.3], abs=1e-15)

    def test_exact_integer_inverse(self):
        m = AffineTorusMap([[2, 1], [1, 1]])
        assert m.A_inv_int == [[1, -1], [-1, 2]]
        back = m.inverse_eval(0.0, m.point([0.4, 0.3]))
        assert back.coords == pytest.approx([0.1, 0.2], abs=1e-15)

    def test_identity_rejected(self):
        with pytest.raises(ValueError, match="modulus one"):
            AffineTorusMap([[1, 0], [0, 1]])

    def test_one_dimensional_rejected(self):
        # no hyperbolic integer matrix of determinant +-1 exists in d = 1
        with pytest.raises(ValueError):
            AffineTorusMap([[1]])
        with pytest.raises(ValueError):
            AffineTorusMap([[-1]])

    def test_det_not_unimodular_rejected(self):
        with pytest.raises(ValueError, match="determinant"):
            AffineTorusMap([[2, 0], [0, 2]])

    def test_det_minus_one_warns(self):
        with pytest.warns(UserWarning, match="determinant -1"):
            m = AffineTorusMap([[0, 1], [1, 1]])
        assert m.det == -1

    def test_non_integer_rejected(self):
        with pytest.raises(ValueError, match="integer"):
            AffineTorusMap([[2.5, 1], [1, 1]])

    def test_jacobians_constant(self, cat_map):
        rng = np.random.default_rng(9)
        for k, x in random_points(cat_map, rng, 20):
            assert np.array_equal(cat_map.jac_x(k, x), np.array([[2.0, 1.0], [1.0, 1.0]]))
            assert np.array_equal(cat_map.jac_k(k, x), np.array([1.0, 0.0]))

    def test_symmetric_flag(self, cat_map):
        assert cat_map.symmetric
        assert not AffineTorusMap([[2, 1], [3, 2]]).symmetric


@pytest.mark.parametrize("map_name", ["standard", "cat"])
def test_eval_inverse_round_trip(map_name, standard_map, cat_map):
    map_ = standard_map if map_name == "standard" else cat_map
    rng = np.random.default_rng(42)
    worst = 0.0
    for k, x in random_points(map_, rng, 1000):
        fwd = map_.eval(k, x)
        back = map_.inverse_eval(k, fwd)
        worst = max(worst, torus_dist(back.coords, x.coords, map_.periods))
        other = map_.eval(k, map_.inverse_eval(k, x))
        worst = max(worst, torus_dist(other.coords, x.coords, map_.periods))
    assert worst < 1e-12


@pytest.mark.parametrize("map_name", ["standard", "cat"])
def test_jacobians_match_finite_differences(map_name, standard_map, cat_map):
    map_ = standard_map if map_name == "standard" else cat_map
    rng = np.random.default_rng(11)
    h = 1e-6
    for k, x in random_points(map_, rng, 1000):
        J = map_.jac_x(k, x)
        dk = map_.jac_k(k, x)
        d = map_.dim
        J_fd = np.empty((d, d))
        for j in range(d):
            e = np.zeros(d)
            e[j] = h
            plus = map_.eval(k, PhasePoint(x.coords + e, map_.periods)).coords
            minus = map_.eval(k, PhasePoint(x.coords - e, map_.periods)).coords
            J_fd[:, j] = wrap_nearest_delta(plus - minus, map_.periods) / (2 * h)
        plus = map_.eval(k + h, x).coords
        minus = map_.eval(k - h, x).coords
        dk_fd = wrap_nearest_delta(plus - minus, map_.periods) / (2 * h)
        scale = max(1.0, float(np.max(np.abs(J))))
        assert np.max(np.abs(J - J_fd)) / scale < 1e-5
        assert np.max(np.abs(dk - dk_fd)) / max(1.0, float(np.max(np.abs(dk)))) < 1e-5


class TestPhasePoint:
    def test_dimension_mismatch_raises(self, standard_map):
        with pytest.raises(ValueError, match="dimension"):
            standard_map.eval(0.5, PhasePoint(np.zeros(3), (1.0, 1.0, 1.0)))

    def test_requires_dimension_one(self):
        with pytest.raises(ValueError):
            PhasePoint(np.array([]), ())

    def test_unbounded_coordinate_passthrough(self):
        p = PhasePoint(np.array([-3.7]), (None,))
        assert p.coords[0] == -3.7

    @given(st.floats(-50, 50), st.floats(0.5, 10))
    def test_wrap_lands_in_fundamental_domain(self, v, period):
        w = wrap_coords(np.array([v]), (period,))[0]
        assert 0.0 <= w < period

    @given(st.floats(-50, 50), st.floats(0.5, 10))
    def test_wrap_nearest_half_open(self, v, period):
        w = wrap_nearest_delta(np.array([v]), (period,))[0]
        assert -period / 2 < w <= period / 2


class TestJsonConstruction:
    def test_standard(self):
        assert isinstance(map_from_json('{"type": "standard"}'), StandardMap)

    def test_affine_with_rational_strings(self):
        m = map_from_json({"type": "affine", "A": [[2, 1], [1, 1]], "b": ["1/2", "0"]})
        assert isinstance(m, AffineTorusMap)
        assert float(m.b_frac[0]) == 0.5

    def test_unknown_type(self):
        with pytest.raises(ValueError, match="unknown map type"):
            map_from_json({"type": "henon"})

    def test_missing_matrix(self):
        with pytest.raises(ValueError, match="requires 'A'"):
            map_from_json({"type": "affine"})

    def test_not_an_object(self):
        with pytest.raises(ValueError):
            map_from_json(json.dumps([1, 2, 3]))
