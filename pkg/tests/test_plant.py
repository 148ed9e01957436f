from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from riseform.plant import (
    AgentState,
    DoubleIntegratorFleet,
    LeaderState,
    NumericalSingularity,
    TwoLinkArmFleet,
    TwoLinkArmParams,
    agent_derivative,
    arm_matrices,
    disturbance,
    kinetic_energy,
    leader_derivative,
)
from riseform.sim import leader_accel, rk4_step

ARM = TwoLinkArmParams(0.8, 1.7, 1.0, 1.0, 9.8)
angles = st.floats(-2 * math.pi, 2 * math.pi)
rates = st.floats(-5, 5)


def exact_mdot(p: TwoLinkArmParams, q, qd) -> np.ndarray:
    s = -p.m2_kg * p.r1_m * p.r2_m * math.sin(q[1]) * qd[1]
    return np.array([[2 * s, s], [s, 0.0]])


class TestParams:
    @pytest.mark.parametrize("field", ["m1_kg", "m2_kg", "r1_m", "r2_m"])
    def test_positive(self, field):
        with pytest.raises(ValueError):
            TwoLinkArmParams(**{field: 0.0})

    def test_gravity_may_be_zero_not_negative(self):
        TwoLinkArmParams(g_mps2=0.0)
        with pytest.raises(ValueError):
            TwoLinkArmParams(g_mps2=-1.0)


class TestArmMatrices:
    def test_straight_arm_inertia(self):
        m, _, _ = arm_matrices(ARM, [0.3, 0.0], [0.0, 0.0])
        np.testing.assert_allclose(m, [[7.6, 3.4], [3.4, 1.7]], rtol=1e-15)

    def test_coriolis_vanishes_at_rest(self):
        _, v, _ = arm_matrices(ARM, [0.4, 1.1], [0.0, 0.0])
        np.testing.assert_array_equal(v @ np.zeros(2), 0.0)
        np.testing.assert_array_equal(v, 0.0)

    def test_gravity_horizontal(self):
        _, _, g = arm_matrices(ARM, [0.0, 0.0], [0.0, 0.0])
        np.testing.assert_allclose(g, [(2.5 + 1.7) * 9.8, 1.7 * 9.8])

    def test_symmetric_and_pd_over_samples(self):
        rng = np.random.default_rng(0)
        for q in rng.uniform(-math.pi, math.pi, size=(1000, 2)):
            m, _, _ = arm_matrices(ARM, q, [0.0, 0.0])
            assert np.array_equal(m, m.T)
            assert np.linalg.eigvalsh(m)[0] > 0

    @given(angles, angles, rates, rates, st.floats(-3, 3), st.floats(-3, 3))
    def test_skew_symmetry_exact_derivative(self, q1, q2, qd1, qd2, x1, x2):
        q, qd, x = np.array([q1, q2]), np.array([qd1, qd2]), np.array([x1, x2])
        _, v, _ = arm_matrices(ARM, q, qd)
        assert abs(x @ (exact_mdot(ARM, q, qd) - 2 * v) @ x) <= 1e-12

    def test_exact_derivative_matches_finite_difference(self):
        rng = np.random.default_rng(1)
        h = 1e-6
        for _ in range(200):
            q, qd = rng.uniform(-3, 3, 2), rng.normal(size=2)
            mp, _, _ = arm_matrices(ARM, q + h * qd, qd)
            mm, _, _ = arm_matrices(ARM, q - h * qd, qd)
            np.testing.assert_allclose((mp - mm) / (2 * h), exact_mdot(ARM, q, qd), atol=1e-8)

    def test_input_gain_bounds(self):
        # g = M^-1 is symmetric PD on a bounded joint box; report its spectrum range
        rng = np.random.default_rng(2)
        lo, hi = np.inf, 0.0
        for q in rng.uniform(-math.pi, math.pi, size=(500, 2)):
            m, _, _ = arm_matrices(ARM, q, [0, 0])
            gi = np.linalg.inv(m)
            np.testing.assert_allclose(gi, gi.T, atol=1e-14)
            eig = np.linalg.eigvalsh(gi)
            lo, hi = min(lo, eig[0]), max(hi, eig[-1])
        assert 0 < lo <= hi < np.inf


class TestAgentDerivative:
    def test_exact_cancellation(self):
        s = AgentState(np.array([0.7, -0.4]), np.array([0.3, 1.2]))
        _, v, g = arm_matrices(ARM, s.p, s.v)
        w = np.array([0.05, -0.02])
        pd, vd = agent_derivative(ARM, s, v @ s.v + g + w, w)
        np.testing.assert_array_equal(pd, s.v)
        np.testing.assert_allclose(vd, 0.0, atol=1e-13)

    def test_gravity_hold(self):
        s = AgentState(np.array([1.0, 0.5]), np.zeros(2))
        _, _, g = arm_matrices(ARM, s.p, s.v)
        _, vd = agent_derivative(ARM, s, g, np.zeros(2))
        np.testing.assert_allclose(vd, 0.0, atol=1e-14)

    def test_pentagon_initial_state(self):
        s = AgentState(np.array([2.1, 0.0]), np.zeros(2))
        w = disturbance(0.0)
        _, vd = agent_derivative(ARM, s, np.zeros(2), w)
        m, _, g = arm_matrices(ARM, s.p, s.v)
        np.testing.assert_allclose(vd, np.linalg.solve(m, -(g + w)), rtol=1e-14)

    def test_fleet_matches_single(self):
        rng = np.random.default_rng(3)
        params = [ARM, TwoLinkArmParams(1.0, 0.5, 0.8, 1.2, 9.8)]
        fleet = TwoLinkArmFleet(params)
        p, v, u = rng.normal(size=(2, 2)), rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
        acc = fleet.accel(0.7, p, v, u)
        for i, prm in enumerate(params):
            _, vd = agent_derivative(prm, AgentState(p[i], v[i]), u[i], disturbance(0.7))
            np.testing.assert_allclose(acc[i], vd, rtol=1e-12)

    def test_fleet_without_disturbance(self):
        fleet = TwoLinkArmFleet([ARM], disturbance_on=False)
        p = np.array([[0.2, 0.3]])
        _, _, g = arm_matrices(ARM, p[0], [0, 0])
        np.testing.assert_allclose(fleet.accel(1.0, p, np.zeros((1, 2)), g[None]), 0.0, atol=1e-13)

    def test_singular_inertia_raises(self):
        # a vanishing second link makes M nearly rank one
        tiny = TwoLinkArmParams(1.0, 1e-14, 1.0, 1e-3, 9.8)
        with pytest.raises(NumericalSingularity):
            agent_derivative(tiny, AgentState(np.zeros(2), np.zeros(2)), np.zeros(2), np.zeros(2))

    def test_double_integrator(self):
        u = np.array([[1.0, -2.0]])
        np.testing.assert_array_equal(DoubleIntegratorFleet(1).accel(0.0, u * 0, u * 0, u), u)


class TestDisturbance:
    @pytest.mark.parametrize(
        "t,expected", [(0.0, [-0.12, 0.0]), (math.pi / 2, [0.0, 0.1]), (math.pi, [0.12, 0.0])]
    )
    def test_values(self, t, expected):
        np.testing.assert_allclose(disturbance(t), expected, atol=1e-16)


class TestLeader:
    @pytest.mark.parametrize(
        "p,v,expected",
        [((1, -1), (0, 0), (-1, 1)), ((0, 0), (0, 0), (0, 0)), ((1, 1), (1, 1), (-1, -1))],
    )
    def test_derivative(self, p, v, expected):
        pd, vd = leader_derivative(LeaderState(np.array(p, float), np.array(v, float)))
        np.testing.assert_array_equal(pd, v)
        np.testing.assert_allclose(vd, expected)

    def test_two_dimensional_only(self):
        with pytest.raises(ValueError):
            leader_derivative(LeaderState(np.zeros(3), np.zeros(3)))

    def test_bounded_over_100s(self):
        damping = np.array([0.2, 0.3])

        def f(t, y):
            return np.r_[y[2:], leader_accel(y[:2], y[2:], damping)]

        y = np.array([1.0, -1.0, 0.0, 0.0])
        peak = np.zeros(4)
        for k in range(100_000):
            y = rk4_step(f, k * 1e-3, y, 1e-3)
            peak = np.maximum(peak, np.abs(y))
        # box from a 100 s reference run at h = 1e-3 (limit cycles of amplitude ~2)
        assert np.all(peak <= np.array([2.01, 2.01, 2.06, 2.11]))


class TestEnergy:
    def test_free_arm_conserves_energy(self):
        prm = TwoLinkArmParams(0.8, 1.7, 1.0, 1.0, 0.0)
        fleet = TwoLinkArmFleet([prm], disturbance_on=False)

        def f(t, y):
            p, v = y[:2][None], y[2:][None]
            return np.r_[y[2:], fleet.accel(t, p, v, np.zeros((1, 2)))[0]]

        y = np.array([0.3, 1.0, 1.0, -0.5])
        e0 = kinetic_energy(prm, y[:2], y[2:])
        for k in range(10_000):
            y = rk4_step(f, k * 1e-3, y, 1e-3)
        assert abs(kinetic_energy(prm, y[:2], y[2:]) - e0) / e0 < 1e-6
