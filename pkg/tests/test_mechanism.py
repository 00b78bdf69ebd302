import math

import numpy as np
import pytest
from scipy.optimize import least_squares

from spmkit.mechanism import (
    HALF_PI,
    HOME_PASSIVE,
    DesignParams,
    JointState,
    NoConvergenceError,
    NotUnitError,
    OutOfHemisphereError,
    SingularError,
    UnreachableError,
    actuation_jacobian,
    actuator_grid,
    end_effector_pose,
    forward_kinematics,
    forward_kinematics_ideal,
    hinge_axes,
    inverse_jacobian,
    inverse_kinematics,
    kinematic_inverse_jacobian,
    loop_closure_residual,
    passive_jacobian,
    singularity_scan,
    solve_passive,
)
from spmkit.rotation import UnitQuaternion, quat_angle_error

NOMINAL = DesignParams()


def random_pairs(rng, n, lim=HALF_PI * 0.999):
    return rng.uniform(-lim, lim, size=(n, 2))


class TestInverseKinematics:
    def test_home(self):
        assert inverse_kinematics([0.0, 0.0, 1.0]) == (0.0, 0.0)

    @pytest.mark.parametrize("N", [(1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.6, -0.8, 0.0)])
    def test_equator_special_case(self, N):
        assert inverse_kinematics(N) == (0.0, HALF_PI)

    def test_direct_substitution(self):
        t1, t2 = inverse_kinematics([1 / math.sqrt(2), 0.0, 1 / math.sqrt(2)])
        assert t1 == pytest.approx(0.0, abs=1e-15)
        assert t2 == pytest.approx(math.pi / 4, abs=1e-15)

    def test_not_unit(self):
        with pytest.raises(NotUnitError):
            inverse_kinematics([0.0, 0.0, 1.01])

    def test_near_chart_edge_round_trip(self):
        # |N_z| < 1e-9 here, yet theta2 is 5e-5 away from -pi/2
        a, b = 1.5017931542716862, -1.5707463247889084
        N = forward_kinematics_ideal(a, b).N
        assert abs(N[2]) < 1e-9
        t1, t2 = inverse_kinematics(N)
        assert abs(t1 - a) < 1e-9 and abs(t2 - b) < 1e-9

    def test_lower_hemisphere(self):
        with pytest.raises(OutOfHemisphereError):
            inverse_kinematics([0.0, 0.6, -0.8])


def _brute_force_normal(t1, t2, grid):
    """Closest IK match over a dense hemisphere grid, then polished by least squares."""
    pts, ik = grid
    d = np.hypot(ik[:, 0] - t1, ik[:, 1] - t2)
    a0, b0 = pts[np.argmin(d)]

    def f(x):
        n = np.array([math.sin(x[0]) * math.cos(x[1]), math.sin(x[0]) * math.sin(x[1]), math.cos(x[0])])
        return np.subtract(inverse_kinematics(n), (t1, t2))

    sol = least_squares(f, [a0, b0], xtol=1e-15, ftol=1e-15, gtol=1e-15)
    a, b = sol.x
    return np.array([math.sin(a) * math.cos(b), math.sin(a) * math.sin(b), math.cos(a)])


@pytest.fixture(scope="module")
def hemisphere_grid():
    a, b = np.meshgrid(np.linspace(1e-3, HALF_PI - 1e-3, 300), np.linspace(-math.pi, math.pi, 600))
    pts = np.column_stack([a.ravel(), b.ravel()])
    n = np.column_stack([np.sin(pts[:, 0]) * np.cos(pts[:, 1]), np.sin(pts[:, 0]) * np.sin(pts[:, 1]), np.cos(pts[:, 0])])
    ik = np.array([inverse_kinematics(v) for v in n])
    return pts, ik


class TestIdealForwardKinematics:
    def test_home(self):
        p = forward_kinematics_ideal(0.0, 0.0)
        np.testing.assert_allclose(p.N, [0, 0, 1], atol=1e-15)
        assert quat_angle_error(p.orientation, UnitQuaternion.identity()) < 1e-15

    def test_quarter_turn_of_servo2(self):
        np.testing.assert_allclose(forward_kinematics_ideal(0.0, math.pi / 4).N, [1 / math.sqrt(2), 0, 1 / math.sqrt(2)], atol=1e-15)

    def test_matches_brute_force_root_finder(self, rng, hemisphere_grid):
        for t1, t2 in random_pairs(rng, 40, lim=1.3):
            N = _brute_force_normal(t1, t2, hemisphere_grid)
            np.testing.assert_allclose(forward_kinematics_ideal(t1, t2).N, N, atol=1e-8)

    def test_round_trip_10k(self, rng):
        pairs = random_pairs(rng, 10_000)
        err = max(np.max(np.abs(np.subtract(inverse_kinematics(forward_kinematics_ideal(a, b).N), (a, b)))) for a, b in pairs)
        assert err <= 1e-9

    def test_pose_invariants(self, rng):
        for a, b in random_pairs(rng, 200):
            p = forward_kinematics_ideal(a, b)
            assert abs(np.linalg.norm(p.N) - 1.0) <= 1e-12
            np.testing.assert_allclose(p.orientation.rotate([0, 0, 1]), p.N, atol=1e-12)

    def test_unreachable(self):
        with pytest.raises(UnreachableError):
            forward_kinematics_ideal(0.0, 2.0)


class TestLoopClosure:
    def test_zero_angles_do_not_close(self):
        assert np.linalg.norm(loop_closure_residual(JointState(0, 0, 0, 0, 0))) > 0.1

    def test_home_closes(self):
        assert np.linalg.norm(loop_closure_residual(JointState(0.0, 0.0, *HOME_PASSIVE))) < 1e-15

    @pytest.mark.parametrize("joint", range(5))
    def test_perturbation_grows_linearly(self, joint):
        s = solve_passive(0.4, -0.3)
        h = 1e-4
        th = s.as_array()
        th[joint] += h
        slope = np.linalg.norm(loop_closure_residual(JointState.from_array(th))) / h
        # every column of d(residual)/d(theta) at a closed state is a unit hinge axis
        col = hinge_axes(s)[:, joint]
        assert slope == pytest.approx(np.linalg.norm(col), rel=1e-3)

    def test_passive_jacobian_matches_finite_differences(self, rng):
        for _ in range(20):
            th = rng.uniform(-2, 2, 5)
            J = passive_jacobian(JointState.from_array(th))
            fd = np.empty((3, 3))
            for k in range(3):
                e = np.zeros(5)
                e[2 + k] = 1e-6
                fd[:, k] = (loop_closure_residual(JointState.from_array(th + e)) - loop_closure_residual(JointState.from_array(th - e))) / 2e-6
            np.testing.assert_allclose(J, fd, atol=1e-7)


class TestSolvePassive:
    def test_distant_guess_stays_on_working_branch(self):
        far = solve_passive(-0.83, 1.08)
        warm = solve_passive(0.50, 0.98, guess=far)
        cold = solve_passive(0.50, 0.98)
        assert math.sin(warm.theta5) * math.sin(cold.theta5) > 0
        assert quat_angle_error(end_effector_pose(warm).orientation, end_effector_pose(cold).orientation) < 1e-10

    def test_home_without_guess(self):
        pose, state = forward_kinematics(0.0, 0.0)
        np.testing.assert_allclose(pose.N, [0, 0, 1], atol=1e-12)
        np.testing.assert_allclose(state.passive, HOME_PASSIVE, atol=1e-12)

    def test_agrees_with_ideal(self, rng):
        for a, b in random_pairs(rng, 300, lim=1.4):
            s = solve_passive(a, b)
            assert np.linalg.norm(loop_closure_residual(s)) <= 1e-8
            pose = end_effector_pose(s)
            ideal = forward_kinematics_ideal(a, b)
            assert np.max(np.abs(pose.N - ideal.N)) <= 1e-7
            assert quat_angle_error(pose.orientation, ideal.orientation) <= 1e-7

    def test_perturbed_alpha1(self):
        params = DesignParams(alpha1=HALF_PI + math.radians(2.0))
        s = solve_passive(0.3, -0.2, params)
        assert np.linalg.norm(loop_closure_residual(s, params)) <= 1e-8
        err = quat_angle_error(end_effector_pose(s, params).orientation, forward_kinematics_ideal(0.3, -0.2).orientation)
        # a ground-twist error only shows once servo 1 leaves home; 0.026 deg here
        assert 1e-5 < err <= math.radians(2.0)

    @pytest.mark.parametrize("k", [1, 2, 3])
    def test_distal_twist_errors_are_first_order(self, k):
        off = np.zeros(5)
        off[k] = math.radians(2.0)
        params = DesignParams().perturbed(off)
        s = solve_passive(0.3, -0.2, params)
        err = quat_angle_error(end_effector_pose(s, params).orientation, forward_kinematics_ideal(0.3, -0.2).orientation)
        assert math.radians(1.0) < err < math.radians(4.0)

    def test_continuity_in_alpha(self):
        prev_pose, guess = None, None
        for d in np.linspace(0.0, math.radians(5.0), 51):
            params = DesignParams().perturbed([d, -d, d, d, -d])
            guess = solve_passive(0.8, 0.6, params, guess)
            pose = end_effector_pose(guess, params)
            if prev_pose is not None:
                assert quat_angle_error(pose.orientation, prev_pose.orientation) < math.radians(1.0)
            prev_pose = pose

    def test_warm_start_matches_cold(self):
        cold = solve_passive(1.0, -0.7)
        warm = solve_passive(1.0, -0.7, guess=solve_passive(0.98, -0.69))
        np.testing.assert_allclose(warm.as_array(), cold.as_array(), atol=1e-10)

    def test_no_convergence(self):
        with pytest.raises(NoConvergenceError):
            solve_passive(0.3, 0.2, DesignParams(alpha2=0.2, alpha3=0.2), max_iterations=2)


def _fd_body_rates(state, rate, h=1e-6):
    t1, t2 = state.theta1, state.theta2
    Rp = end_effector_pose(solve_passive(t1 + h * rate[0], t2 + h * rate[1], guess=state)).orientation.to_matrix()
    Rm = end_effector_pose(solve_passive(t1 - h * rate[0], t2 - h * rate[1], guess=state)).orientation.to_matrix()
    R0 = end_effector_pose(state).orientation.to_matrix()
    W = (Rp - Rm) / (2 * h) @ R0.T
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


class TestInverseJacobian:
    def test_quarter_turns(self):
        J = inverse_jacobian(JointState(0, 0, HALF_PI, HALF_PI, HALF_PI))
        np.testing.assert_allclose(J, [[1, 0, 0], [0, -1, 0], [0, 0, 1]], atol=1e-15)

    def test_singular(self):
        with pytest.raises(SingularError):
            inverse_jacobian(JointState(0, 0, 0.3, 0.2, 0.0))

    def test_rows_one_and_three_are_unit(self, rng):
        for th in rng.uniform(-3, 3, size=(100, 5)):
            J = inverse_jacobian(JointState.from_array(th))
            assert np.linalg.norm(J[0]) == pytest.approx(1.0, abs=1e-15)
            assert np.linalg.norm(J[2]) == pytest.approx(1.0, abs=1e-15)

    def test_closed_form_rows_one_and_three_are_not_orthogonal(self, rng):
        # their dot product is -sin(2 theta3); zero only on quarter turns
        for th in rng.uniform(-3, 3, size=(100, 5)):
            J = inverse_jacobian(JointState.from_array(th))
            assert J[0] @ J[2] == pytest.approx(-math.sin(2 * th[2]), abs=1e-14)

    def test_loop_derived_jacobian_matches_finite_differences(self, rng):
        for a, b in random_pairs(rng, 50, lim=1.2):
            s = solve_passive(a, b)
            G = kinematic_inverse_jacobian(s)
            for rate in rng.normal(size=(2, 2)):
                w = _fd_body_rates(s, rate)
                out = G @ w
                np.testing.assert_allclose(out[:2], rate, rtol=1e-5, atol=1e-6 * np.linalg.norm(rate))
                assert abs(out[2]) <= 1e-8 * np.linalg.norm(w) + 1e-9

    def test_actuation_jacobian_against_finite_differences(self, rng):
        s = solve_passive(0.5, 0.4)
        B = actuation_jacobian(s)
        for k in range(2):
            e = np.zeros(2)
            e[k] = 1.0
            np.testing.assert_allclose(B[:, k], _fd_body_rates(s, e), atol=1e-7)


class TestSingularityScan:
    def test_empty(self):
        r = singularity_scan(NOMINAL, [])
        assert len(r) == 0 and r.singular_fraction == 0.0

    def test_nominal_is_regular(self):
        r = singularity_scan(NOMINAL, actuator_grid(n=12))
        s = r.summary()
        assert s["reachable"] == 144 and r.singular_fraction == 0.0
        assert s["min_abs_sin_theta5"] > 0.3
        assert s["max_condition_number"] < 10.0

    def test_zero_ground_twist_is_singular_everywhere(self):
        r = singularity_scan(DesignParams(alpha1=0.0), actuator_grid(n=12))
        assert r.singular_fraction == 1.0

    def test_csv(self, tmp_path):
        r = singularity_scan(NOMINAL, actuator_grid(n=3))
        text = r.write_csv(tmp_path / "scan.csv").read_text().splitlines()
        assert text[0] == "theta1,theta2,sin_theta5,condition_number,reachable"
        assert len(text) == 10
