import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import simpson

from dcplan.errors import DegenerateHorizon, FarFromPath, OutOfRange
from dcplan.frenet import (
    FrenetPose,
    QuinticCurve,
    ReferencePath,
    curve_cost,
    fit_quintic,
    jerk_integral,
    to_cartesian,
    to_frenet,
)


@pytest.fixture
def straight_path():
    return ReferencePath([[0.0, 0.0], [100.0, 0.0]])


@pytest.fixture
def l_path():
    # L-shape: east 20 m then north 20 m
    return ReferencePath([[0.0, 0.0], [20.0, 0.0], [20.0, 20.0]])


class TestProjection:
    def test_straight_offset_point(self, straight_path):
        pose = to_frenet(straight_path, (10.0, 2.0))
        assert pose.b == pytest.approx(10.0)
        assert pose.d == pytest.approx(2.0)
        for v in (pose.b_dot, pose.d_dot, pose.b_ddot, pose.d_ddot):
            assert v == 0.0

    def test_path_start_identity(self, straight_path):
        pose = to_frenet(straight_path, (0.0, 0.0))
        assert pose.b == pytest.approx(0.0)
        assert pose.d == pytest.approx(0.0)

    def test_velocity_decomposition(self, straight_path):
        pose = to_frenet(straight_path, (5.0, 1.0), velocity=(3.0, -0.5), acceleration=(0.2, 0.1))
        assert pose.b_dot == pytest.approx(3.0)
        assert pose.d_dot == pytest.approx(-0.5)
        assert pose.b_ddot == pytest.approx(0.2)
        assert pose.d_ddot == pytest.approx(0.1)

    def test_left_is_positive(self, straight_path):
        # path runs +x, so +y is left
        assert to_frenet(straight_path, (1.0, 0.5)).d > 0
        assert to_frenet(straight_path, (1.0, -0.5)).d < 0

    def test_far_point_raises(self, straight_path):
        with pytest.raises(FarFromPath):
            to_frenet(straight_path, (50.0, 80.0))

    def test_l_path_against_dense_sampling_oracle(self, l_path):
        # brute-force oracle: sample the polyline at 1 mm resolution and take
        # the nearest sample (smallest arc length on ties)
        s_dense = np.arange(0.0, 40.0 + 1e-9, 0.001)
        pts = np.where(
            (s_dense <= 20.0)[:, None],
            np.stack([s_dense, np.zeros_like(s_dense)], axis=1),
            np.stack([np.full_like(s_dense, 20.0), s_dense - 20.0], axis=1),
        )
        probes = [(22.5, -1.5), (21.0, 1.0), (5.0, 3.0), (19.5, -2.0), (23.0, 22.0)]
        for probe in probes:
            dist = np.hypot(pts[:, 0] - probe[0], pts[:, 1] - probe[1])
            k = int(np.argmin(dist))  # argmin returns first (smallest b) on ties
            b_oracle = s_dense[k]
            d_oracle = dist[k]
            pose = to_frenet(l_path, probe)
            assert pose.b == pytest.approx(b_oracle, abs=1e-3)
            assert abs(pose.d) == pytest.approx(d_oracle, abs=1e-5)

    def test_corner_tie_break_smallest_b(self, l_path):
        # probe on the outside bisector of the corner: equidistant from both
        # segments, tie resolved toward the first one
        pose = to_frenet(l_path, (21.0, -1.0))
        assert pose.b == pytest.approx(20.0)
        assert pose.d == pytest.approx(-np.sqrt(2.0))


class TestRoundTrip:
    def test_straight_cases(self, straight_path):
        pos, heading = to_cartesian(straight_path, FrenetPose(b=10.0, d=0.0))
        assert np.allclose(pos, [10.0, 0.0])
        assert heading == pytest.approx(0.0)
        pos, _ = to_cartesian(straight_path, FrenetPose(b=10.0, d=2.0))
        assert np.allclose(pos, [10.0, 2.0])

    def test_out_of_range(self, straight_path):
        with pytest.raises(OutOfRange):
            to_cartesian(straight_path, FrenetPose(b=150.0, d=0.0))
        with pytest.raises(OutOfRange):
            to_cartesian(straight_path, FrenetPose(b=-1.0, d=0.0))

    def test_round_trip_random_poses(self, curved_test_path):
        rng = np.random.default_rng(7)
        for _ in range(200):
            b = rng.uniform(0.5, curved_test_path.length - 0.5)
            d = rng.uniform(-1.6, 1.6)
            pos, _ = to_cartesian(curved_test_path, FrenetPose(b=b, d=d))
            pose = to_frenet(curved_test_path, pos)
            pos2, _ = to_cartesian(curved_test_path, pose)
            assert np.hypot(*(pos - pos2)) < 1e-6


@pytest.fixture
def curved_test_path():
    # smooth arc sampled finely, like the bundled intersection paths
    theta = np.linspace(0.0, np.pi / 2, 80)
    arc = np.stack([10.0 * np.sin(theta), 10.0 * (1 - np.cos(theta))], axis=1)
    lead = np.stack([np.linspace(-8.0, -0.25, 16), np.zeros(16)], axis=1)
    return ReferencePath(np.concatenate([lead, arc]))


class TestQuintic:
    def test_zero_boundary_is_zero(self):
        c = fit_quintic([0, 0, 0], [0, 0, 0], horizon=2.7)
        assert np.allclose(c, 0.0)

    def test_unit_step_coefficients(self):
        # oracle: solve the full 6x6 boundary system directly
        H = 1.0
        M = np.array([
            [1, 0, 0, 0, 0, 0],
            [0, 1, 0, 0, 0, 0],
            [0, 0, 2, 0, 0, 0],
            [1, H, H**2, H**3, H**4, H**5],
            [0, 1, 2*H, 3*H**2, 4*H**3, 5*H**4],
            [0, 0, 2, 6*H, 12*H**2, 20*H**3],
        ])
        oracle = np.linalg.solve(M, np.array([0, 0, 0, 1, 0, 0], dtype=float))
        c = fit_quintic([0, 0, 0], [1, 0, 0], horizon=1.0)
        assert np.allclose(c, oracle, atol=1e-12)
        assert np.allclose(c, [0, 0, 0, 10, -15, 6], atol=1e-12)

    def test_constant_velocity_line(self):
        c = fit_quintic([0, 1, 0], [1, 1, 0], horizon=1.0)
        assert np.allclose(c, [0, 1, 0, 0, 0, 0], atol=1e-12)

    def test_degenerate_horizon(self):
        with pytest.raises(DegenerateHorizon):
            fit_quintic([0, 0, 0], [1, 0, 0], horizon=1e-9)

    @settings(max_examples=200, deadline=None)
    @given(
        start=st.tuples(*[st.floats(-10, 10) for _ in range(3)]),
        end=st.tuples(*[st.floats(-10, 10) for _ in range(3)]),
        horizon=st.floats(0.2, 8.0),
    )
    def test_boundary_reproduction_property(self, start, end, horizon):
        c = fit_quintic(start, end, horizon)
        curve = QuinticCurve(coeffs_b=c, coeffs_d=np.zeros(6), horizon=horizon)
        got0 = [curve.position(0.0), curve.velocity(0.0), curve.acceleration(0.0)]
        gotH = [curve.position(horizon), curve.velocity(horizon), curve.acceleration(horizon)]
        for got, want in zip(got0 + gotH, list(start) + list(end)):
            assert abs(got - want) <= 1e-9 * max(1.0, abs(want))

    def test_boundary_reproduction_1000_random(self):
        rng = np.random.default_rng(11)
        for _ in range(1000):
            start = rng.uniform(-20, 20, 3)
            end = rng.uniform(-20, 20, 3)
            H = rng.uniform(0.3, 6.0)
            c = fit_quintic(start, end, H)
            curve = QuinticCurve(coeffs_b=c, coeffs_d=np.zeros(6), horizon=H)
            vals = np.array([
                curve.position(0.0), curve.velocity(0.0), curve.acceleration(0.0),
                curve.position(H), curve.velocity(H), curve.acceleration(H),
            ])
            want = np.concatenate([start, end])
            assert np.all(np.abs(vals - want) <= 1e-9 * np.maximum(1.0, np.abs(want)))


def _simpson_jerk_oracle(curve, axis, panels=10_000):
    t = np.linspace(0.0, curve.horizon, panels + 1)
    return simpson(curve.jerk(t, axis) ** 2, x=t)


class TestJerkIntegral:
    def test_constant_curve_zero(self):
        curve = QuinticCurve(coeffs_b=np.array([3, 0, 0, 0, 0, 0.0]), coeffs_d=np.zeros(6), horizon=2.0)
        assert jerk_integral(curve, "b") == 0.0

    def test_minimum_jerk_unit_step_is_720(self):
        c = fit_quintic([0, 0, 0], [1, 0, 0], horizon=1.0)
        curve = QuinticCurve(coeffs_b=c, coeffs_d=np.zeros(6), horizon=1.0)
        # quadrature oracle on jerk(t) = 60 - 360 t + 360 t^2
        assert _simpson_jerk_oracle(curve, "b") == pytest.approx(720.0, rel=1e-8)
        assert jerk_integral(curve, "b") == pytest.approx(720.0, abs=1e-6)

    def test_cubic_constant_jerk_closed_form(self):
        # p(t) = t^3 has constant jerk 6, so the integral is 36 * H
        curve = QuinticCurve(coeffs_b=np.array([0, 0, 0, 1, 0, 0.0]), coeffs_d=np.zeros(6), horizon=3.0)
        assert jerk_integral(curve, "b") == pytest.approx(36.0 * 3.0, rel=1e-12)

    def test_matches_quadrature_on_random_quintics(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            cb = rng.uniform(-4, 4, 6)
            H = rng.uniform(0.5, 5.0)
            curve = QuinticCurve(coeffs_b=cb, coeffs_d=np.zeros(6), horizon=H)
            want = _simpson_jerk_oracle(curve, "b")
            got = jerk_integral(curve, "b")
            assert got == pytest.approx(want, rel=1e-6)


class TestCurveCost:
    WEIGHTS = {"k_j": 0.1, "k_t": 1.0, "k_p": 1.0}

    def test_straight_constant_velocity_zero_cost(self):
        curve = QuinticCurve(coeffs_b=np.array([0, 5, 0, 0, 0, 0.0]), coeffs_d=np.zeros(6), horizon=3.0)
        assert curve_cost(curve, self.WEIGHTS, fixed_time_term=0.0) == 0.0

    def test_unit_offset_with_table_weight(self):
        curve = QuinticCurve(coeffs_b=np.zeros(6), coeffs_d=np.array([1, 0, 0, 0, 0, 0.0]), horizon=2.0)
        assert curve_cost(curve, self.WEIGHTS, fixed_time_term=0.0) == pytest.approx(1.0)

    def test_minimum_jerk_shift_cost_73(self):
        cd = fit_quintic([0, 0, 0], [1, 0, 0], horizon=1.0)
        curve = QuinticCurve(coeffs_b=np.zeros(6), coeffs_d=cd, horizon=1.0)
        assert curve_cost(curve, self.WEIGHTS, fixed_time_term=0.0) == pytest.approx(73.0, abs=1e-6)

    def test_monotone_in_jerk_and_offset(self):
        rng = np.random.default_rng(5)
        for _ in range(30):
            d_end = rng.uniform(0.1, 2.0)
            cd = fit_quintic([0, 0, 0], [d_end, 0, 0], horizon=1.5)
            curve = QuinticCurve(coeffs_b=np.zeros(6), coeffs_d=cd, horizon=1.5)
            base = curve_cost(curve, self.WEIGHTS)
            # larger terminal offset -> more jerk and more offset -> higher cost
            cd2 = fit_quintic([0, 0, 0], [d_end + 0.5, 0, 0], horizon=1.5)
            curve2 = QuinticCurve(coeffs_b=np.zeros(6), coeffs_d=cd2, horizon=1.5)
            assert curve_cost(curve2, self.WEIGHTS) > base
