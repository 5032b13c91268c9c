import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from halfphys.mathcore import (
    angdiff,
    expmap,
    integrate_orientation,
    logmap,
    quat_conj,
    quat_from_axis_angle,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
    shape_inertia,
    slerp,
)
from halfphys.shapes import Box, Capsule, Sphere, ShapeError

from oracles import (
    axis_angle_matrix,
    inside_box,
    inside_capsule,
    inside_sphere,
    mc_inertia,
    quat_matrix,
    random_quat,
    rotation_distance,
)

Z = np.array([0.0, 0.0, 1.0])
IDENT = np.array([1.0, 0.0, 0.0, 0.0])

unit_quats = st.lists(st.floats(-1, 1), min_size=4, max_size=4).filter(
    lambda v: np.linalg.norm(v) > 0.1
).map(lambda v: np.asarray(v) / np.linalg.norm(v))


def same_rotation(a, b, tol=1e-9):
    return rotation_distance(a, b) <= tol


class TestQuatMul:
    def test_identity_left(self):
        q = quat_from_axis_angle(np.array([1.0, 2.0, 3.0]), 0.7)
        np.testing.assert_allclose(quat_mul(IDENT, q), q, atol=1e-15)

    def test_inverse(self):
        q = quat_from_axis_angle(np.array([1.0, 2.0, 3.0]), 0.7)
        np.testing.assert_allclose(quat_mul(q, quat_conj(q)), IDENT, atol=1e-15)

    def test_quarter_turns_compose_to_half_turn(self):
        q90 = quat_from_axis_angle(Z, math.pi / 2)
        R = axis_angle_matrix(Z, math.pi / 2) @ axis_angle_matrix(Z, math.pi / 2)
        np.testing.assert_allclose(quat_matrix(quat_mul(q90, q90)), R, atol=1e-12)
        np.testing.assert_allclose(quat_matrix(quat_mul(q90, q90)), axis_angle_matrix(Z, math.pi), atol=1e-12)

    @given(unit_quats, unit_quats, unit_quats)
    @settings(max_examples=200, deadline=None)
    def test_associative_and_unit(self, a, b, c):
        left = quat_mul(quat_mul(a, b), c)
        right = quat_mul(a, quat_mul(b, c))
        assert np.max(np.abs(left - right)) <= 1e-12
        assert abs(np.linalg.norm(left) - 1) <= 1e-9

    @given(unit_quats, unit_quats)
    @settings(max_examples=200, deadline=None)
    def test_matches_matrix_product(self, a, b):
        np.testing.assert_allclose(quat_matrix(quat_mul(a, b)), quat_matrix(a) @ quat_matrix(b), atol=1e-12)

    @given(unit_quats, st.lists(st.floats(-5, 5), min_size=3, max_size=3))
    @settings(max_examples=100, deadline=None)
    def test_rotate_and_matrix_agree(self, q, v):
        v = np.asarray(v)
        np.testing.assert_allclose(quat_rotate(q, v), quat_matrix(q) @ v, atol=1e-12)
        np.testing.assert_allclose(quat_to_matrix(q), quat_matrix(q), atol=1e-12)


class TestSlerp:
    def test_endpoints(self):
        rng = np.random.default_rng(0)
        a, b = random_quat(rng), random_quat(rng)
        np.testing.assert_array_equal(slerp(a, b, 0.0), a)
        assert same_rotation(slerp(a, b, 1.0), b)

    def test_halfway_to_quarter_turn(self):
        q = slerp(IDENT, quat_from_axis_angle(Z, math.pi / 2), 0.5)
        np.testing.assert_allclose(quat_matrix(q), axis_angle_matrix(Z, math.pi / 4), atol=1e-12)

    def test_shortest_path_ignores_sign(self):
        rng = np.random.default_rng(1)
        a, b = random_quat(rng), random_quat(rng)
        for u in (0.25, 0.5, 0.75):
            assert same_rotation(slerp(a, b, u), slerp(a, -b, u))

    def test_antipodal_is_deterministic(self):
        half_turn = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), math.pi)
        a = slerp(IDENT, half_turn, 0.5)
        b = slerp(IDENT, -half_turn, 0.5)
        assert same_rotation(a, b)
        assert abs(rotation_distance(IDENT, a) - math.pi / 2) < 1e-9

    def test_angle_is_linear_in_u(self):
        rng = np.random.default_rng(2)
        for _ in range(1000):
            a, b = random_quat(rng), random_quat(rng)
            u = rng.uniform()
            total = rotation_distance(a, b)
            if total > math.pi - 1e-3:
                continue
            assert abs(rotation_distance(a, slerp(a, b, u)) - u * total) <= 1e-9


class TestAngdiff:
    def test_identical(self):
        q = quat_from_axis_angle(np.array([0.3, -1.0, 0.2]), 1.1)
        assert np.max(np.abs(angdiff(q, q, 0.1))) <= 1e-12

    def test_double_cover(self):
        q = quat_from_axis_angle(np.array([0.3, -1.0, 0.2]), 1.1)
        assert np.max(np.abs(angdiff(-q, q, 0.1))) <= 1e-12

    def test_quarter_turn(self):
        w = angdiff(quat_from_axis_angle(Z, math.pi / 2), IDENT, 0.1)
        np.testing.assert_allclose(w, [0.0, 0.0, 15.7079633], atol=1e-7)

    def test_integrate_zero(self):
        q = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), 0.4)
        np.testing.assert_allclose(integrate_orientation(q, np.zeros(3), 0.3), q, atol=1e-15)

    def test_integrate_half_turn_rate(self):
        q = integrate_orientation(IDENT, np.array([0.0, 0.0, math.pi]), 0.5)
        np.testing.assert_allclose(quat_matrix(q), axis_angle_matrix(Z, math.pi / 2), atol=1e-12)

    def test_world_frame(self):
        # a world-z spin applied to a tilted body rotates about world z, not body z
        tilt = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), 0.5)
        q = integrate_orientation(tilt, np.array([0.0, 0.0, 1.0]), 0.3)
        np.testing.assert_allclose(quat_matrix(q), axis_angle_matrix(Z, 0.3) @ quat_matrix(tilt), atol=1e-12)

    def test_round_trip_ten_thousand(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(10_000):
            cur, tgt = random_quat(rng), random_quat(rng)
            dt = rng.uniform(1 / 120, 1 / 10)
            got = integrate_orientation(cur, angdiff(tgt, cur, dt), dt)
            worst = max(worst, rotation_distance(got, tgt))
        assert worst <= 1e-9

    @given(st.lists(st.floats(-3.1, 3.1), min_size=3, max_size=3))
    @settings(max_examples=200, deadline=None)
    def test_log_exp_inverse(self, v):
        v = np.asarray(v)
        if np.linalg.norm(v) >= math.pi:
            return
        np.testing.assert_allclose(logmap(expmap(v)), v, atol=1e-12)


class TestInertia:
    def test_sphere(self):
        np.testing.assert_allclose(shape_inertia(Sphere(0.5), 1.0).principal, [0.1, 0.1, 0.1], rtol=1e-12)

    def test_box(self):
        np.testing.assert_allclose(shape_inertia(Box(np.array([0.5, 0.5, 0.5])), 12.0).principal, [2, 2, 2], rtol=1e-12)

    def test_capsule_against_frozen_monte_carlo(self):
        # 4e7-sample Monte-Carlo estimate (seed 12345), frozen
        oracle = np.array([0.0532622, 0.0532611, 0.0095002])
        got = shape_inertia(Capsule(0.1, 0.2), 2.0).principal
        assert np.all(np.abs(got - oracle) / oracle < 0.01)

    def test_capsule_live_monte_carlo(self):
        rng = np.random.default_rng(7)
        r, hl = 0.1, 0.2
        oracle = mc_inertia(inside_capsule(r, hl), [-r, -r, -hl - r], [r, r, hl + r], 2.0, 10_000_000, rng)
        got = shape_inertia(Capsule(r, hl), 2.0).principal
        assert np.all(np.abs(got - oracle) / oracle < 0.01)

    @given(
        st.sampled_from(["sphere", "box", "capsule"]),
        st.lists(st.floats(0.05, 0.5), min_size=3, max_size=3),
        st.floats(0.1, 50.0),
    )
    @settings(max_examples=12, deadline=None)
    def test_random_shapes_within_one_percent(self, kind, dims, mass):
        rng = np.random.default_rng(11)
        if kind == "sphere":
            shape, r = Sphere(dims[0]), dims[0]
            oracle = mc_inertia(inside_sphere(r), [-r] * 3, [r] * 3, mass, 1_000_000, rng)
        elif kind == "box":
            he = np.asarray(dims)
            shape = Box(he)
            oracle = mc_inertia(inside_box(he), -he, he, mass, 1_000_000, rng)
        else:
            r, hl = dims[0], dims[1]
            shape = Capsule(r, hl)
            oracle = mc_inertia(inside_capsule(r, hl), [-r, -r, -hl - r], [r, r, hl + r], mass, 1_000_000, rng)
        got = shape_inertia(shape, mass).principal
        assert np.all(np.abs(got - oracle) / oracle < 0.01)
        a, b, c = got
        assert a <= b + c + 1e-15 and b <= a + c + 1e-15 and c <= a + b + 1e-15

    def test_rejects_bad_input(self):
        with pytest.raises(ValueError):
            shape_inertia(Sphere(0.1), 0.0)
        with pytest.raises(ShapeError):
            Sphere(-1.0)
