import io
import math
from fractions import Fraction

import numpy as np
import pytest

from hyperod.analysis import frmat, mat_identity, mat_inv, mat_pow, mat_sub, mat_vec
from hyperod.dynamics import wrap_nearest_delta
from hyperod.tangent import (advance_backward, advance_forward, csv_sink, fd_jacobian,
                             initial_state, iter_shells, iter_states, propagate)

from conftest import CAT_A, CAT_B


def state_at(map_, k, x0, n):
    s = initial_state(map_, x0)
    step = advance_forward if n >= 0 else advance_backward
    for _ in range(abs(n)):
        s = step(s, map_, k)
    return s


def exact_cat_data(n):
    A = frmat(CAT_A)
    I = mat_identity(2)
    w = mat_vec(mat_inv(mat_sub(I, A)), [Fraction(v) for v in CAT_B])
    An = mat_pow(A, n)
    dk = mat_vec(mat_sub(I, An), w)
    return An, dk


def rel_max(got, want):
    scale = max(1.0, float(np.max(np.abs(want))))
    return float(np.max(np.abs(got - want))) / scale


class TestRecursionBase:
    def test_first_forward_step(self, standard_map):
        x0 = standard_map.point([3.0, 0.0])
        s1 = advance_forward(initial_state(standard_map, x0), standard_map, 0.5)
        assert np.array_equal(s1.F_true(), standard_map.jac_x(0.5, x0))
        assert np.array_equal(s1.dk_true(), standard_map.jac_k(0.5, x0))
        assert s1.n == 1

    def test_initial_state_flags(self, standard_map):
        s0 = initial_state(standard_map, standard_map.point([1.0, 2.0]))
        assert np.array_equal(s0.F, np.eye(2))
        assert s0.scale2_F == 0 and s0.logscale_F == 0.0
        assert s0.scale2_dk is None and s0.logscale_dk == -math.inf
        assert np.all(s0.dk_true() == 0.0)

    def test_direction_preconditions(self, standard_map):
        x0 = standard_map.point([1.0, 2.0])
        fwd = state_at(standard_map, 0.5, x0, 2)
        bwd = state_at(standard_map, 0.5, x0, -2)
        with pytest.raises(ValueError):
            advance_backward(fwd, standard_map, 0.5)
        with pytest.raises(ValueError):
            advance_forward(bwd, standard_map, 0.5)


class TestAffineExactness:
    @pytest.mark.parametrize("n", [1, 5, 17, 30, -1, -5, -17, -30])
    def test_state_transition_matches_integer_powers(self, cat_map, n):
        s = state_at(cat_map, 0.3, cat_map.point([0.125, 0.25]), n)
        An, _ = exact_cat_data(n)
        want = np.array([[float(v) for v in row] for row in An])
        assert rel_max(s.F_true(), want) < 1e-10

    @pytest.mark.parametrize("n", list(range(-20, 21)))
    def test_parameter_column_matches_closed_form(self, cat_map, n):
        s = state_at(cat_map, 0.3, cat_map.point([0.125, 0.25]), n)
        _, dk = exact_cat_data(n)
        want = np.array([float(v) for v in dk])
        if n == 0:
            assert s.scale2_dk is None
            assert np.all(s.dk_true() == 0.0)
        else:
            assert rel_max(s.dk_true(), want) < 1e-10

    def test_backward_step_uses_exact_adjugate(self, cat_map_b0):
        s = advance_backward(initial_state(cat_map_b0, cat_map_b0.point([0.0, 0.0])),
                             cat_map_b0, 0.0)
        assert np.array_equal(s.F_true(), np.array([[1.0, -1.0], [-1.0, 2.0]]))


def test_backward_forward_composition(standard_map):
    x0 = standard_map.point([3.0, 0.0])
    s = state_at(standard_map, 0.5, x0, -7)
    # walking forward from a backward state is out of contract; compose maps instead
    back_then_forth = standard_map.eval(0.5, standard_map.inverse_eval(0.5, x0))
    assert float(np.max(np.abs(wrap_nearest_delta(
        back_then_forth.coords - x0.coords, standard_map.periods)))) < 1e-10
    # and F^{-n} composed with the forward cocycle returns the identity
    F_back = s.F_true()
    fwd = initial_state(standard_map, s.x)
    for _ in range(7):
        fwd = advance_forward(fwd, standard_map, 0.5)
    assert rel_max(fwd.F_true() @ F_back, np.eye(2)) < 1e-10


def test_integrable_shear_backward_growth(standard_map):
    # k = 0 freezes y, so the map is the shear (x, y) -> (x + y, y) and
    # F^{-n} = [[1, -n], [0, 1]]: linear growth, exactly representable
    x0 = standard_map.point([1.0, 2.0])
    s = initial_state(standard_map, x0)
    for n in range(1, 12):
        s = advance_backward(s, standard_map, 0.0)
        assert np.array_equal(s.F_true(), np.array([[1.0, -float(n)], [0.0, 1.0]]))
    assert float(np.max(np.abs(s.F_true()))) == 11.0


def det2_dd(F):
    # determinant of the scaled block cancels catastrophically in plain
    # float for hyperbolic powers; compute it with exact products
    from hyperod.ddouble import DoubleDouble, two_prod
    ad = DoubleDouble(*two_prod(float(F[0, 0]), float(F[1, 1])))
    bc = DoubleDouble(*two_prod(float(F[0, 1]), float(F[1, 0])))
    return ad - bc


@pytest.mark.parametrize("map_name,k", [("standard", 0.5), ("cat", 0.3)])
def test_det_logscale_identity(map_name, k, standard_map, cat_map):
    # volume preservation: d * logscale + log |det F_scaled| = 0
    map_ = standard_map if map_name == "standard" else cat_map
    x0 = map_.point([3.0, 0.0] if map_name == "standard" else [0.125, 0.25])
    for s in iter_states(map_, k, x0, 25):
        val = map_.dim * s.logscale_F + det2_dd(s.F).abs().log()
        assert abs(val) <= 1e-8 * max(1, abs(s.n))


@pytest.mark.parametrize("map_name", ["standard", "cat"])
def test_cocycle_property(map_name, standard_map, cat_map):
    map_ = standard_map if map_name == "standard" else cat_map
    k = 0.5 if map_name == "standard" else 0.3
    rng = np.random.default_rng(5)
    x0 = map_.point([3.0, 0.0] if map_name == "standard" else [0.125, 0.25])
    for _ in range(12):
        n = int(rng.integers(1, 10))
        m = int(rng.integers(1, 10))
        s_n = state_at(map_, k, x0, n)
        s_m = state_at(map_, k, s_n.x, m)
        s_mn = state_at(map_, k, x0, m + n)
        lhs = np.ldexp(s_m.F @ s_n.F, s_m.scale2_F + s_n.scale2_F)
        assert rel_max(lhs, s_mn.F_true()) < 1e-8


class TestPropagate:
    def test_emission_order_and_count(self, standard_map):
        seen = []
        propagate(standard_map, 0.5, standard_map.point([3.0, 0.0]), 1, lambda s: seen.append(s.n))
        assert seen == [0, 1, -1]
        seen.clear()
        propagate(standard_map, 0.5, standard_map.point([3.0, 0.0]), 4, lambda s: seen.append(s.n))
        assert seen == [0, 1, -1, 2, -2, 3, -3, 4, -4]
        assert len(seen) == 2 * 4 + 1

    def test_requires_positive_N(self, standard_map):
        with pytest.raises(ValueError):
            propagate(standard_map, 0.5, standard_map.point([3.0, 0.0]), 0, lambda s: None)

    def test_shell_pairing(self, cat_map):
        shells = list(iter_shells(cat_map, 0.3, cat_map.point([0.125, 0.25]), 5))
        assert len(shells) == 6
        assert shells[0][0].n == 0 and shells[0][1].n == 0
        for n, (p, m) in enumerate(shells):
            assert p.n == n and m.n == -n

    def test_affine_states_match_integer_powers(self, cat_map):
        for s in iter_states(cat_map, 0.3, cat_map.point([0.125, 0.25]), 20):
            An, _ = exact_cat_data(s.n)
            want = np.array([[float(v) for v in row] for row in An])
            assert rel_max(s.F_true(), want) < 1e-10


class TestFiniteDifferenceOracle:
    def test_identity_at_zero_steps(self, standard_map):
        F, dk = fd_jacobian(standard_map, 0.5, standard_map.point([3.0, 0.0]), 0, 1e-6)
        assert np.allclose(F, np.eye(2), atol=1e-9)
        assert np.allclose(dk, 0.0, atol=1e-9)

    @pytest.mark.parametrize("n", [8, -8])
    def test_matches_tangent_propagation(self, standard_map, n):
        x0 = standard_map.point([3.0, 0.0])
        F_fd, dk_fd = fd_jacobian(standard_map, 0.5, x0, n, 1e-6)
        s = state_at(standard_map, 0.5, x0, n)
        assert rel_max(F_fd, s.F_true()) < 1e-5
        assert rel_max(dk_fd, s.dk_true()) < 1e-5

    @pytest.mark.parametrize("n", [6, -6])
    def test_affine_is_exact_to_rounding(self, cat_map, n):
        F_fd, dk_fd = fd_jacobian(cat_map, 0.3, cat_map.point([0.125, 0.25]), n, 1e-6)
        An, dk = exact_cat_data(n)
        assert rel_max(F_fd, np.array([[float(v) for v in r] for r in An])) < 1e-9
        assert rel_max(dk_fd, np.array([float(v) for v in dk])) < 1e-9

    def test_preconditions(self, standard_map):
        x0 = standard_map.point([3.0, 0.0])
        with pytest.raises(ValueError):
            fd_jacobian(standard_map, 0.5, x0, 13, 1e-6)
        with pytest.raises(ValueError):
            fd_jacobian(standard_map, 0.5, x0, 5, 1e-3)


def test_csv_dump(standard_map):
    buf = io.StringIO()
    propagate(standard_map, 0.5, standard_map.point([3.0, 0.0]), 3,
              csv_sink(buf, standard_map.dim))
    lines = buf.getvalue().strip().splitlines()
    assert lines[0].split(",") == ["n", "x_1", "x_2", "logscale_F", "log_F_max", "logscale_dk"]
    assert len(lines) == 1 + 7
    first = lines[1].split(",")
    assert first[0] == "0" and float(first[3]) == 0.0


def test_rescaling_keeps_entries_bounded(cat_map_b0):
    # 2**512 bound needs ~440 steps of the cat map to trigger
    s = initial_state(cat_map_b0, cat_map_b0.point([0.125, 0.25]))
    hit = False
    for _ in range(500):
        s = advance_forward(s, cat_map_b0, 0.0)
        amax = float(np.max(np.abs(s.F)))
        assert 2.0 ** -512 <= amax <= 2.0 ** 512
        hit = hit or s.scale2_F != 0
    assert hit, "expected at least one rescale in 500 cat-map steps"
    assert math.isfinite(s.logscale_F)
