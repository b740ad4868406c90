import numpy as np
import pytest

from animbiped import ik
from animbiped import model as M
from animbiped.animio import TargetRig
from animbiped.model import layout


@pytest.fixture(scope="module")
def robot():
    return M.load_model()


@pytest.fixture(scope="module")
def q_home(robot):
    return M.standing_pose(robot, 0.9)


def random_feasible_config(robot, rng, base):
    """Random configuration satisfying the spring constraints exactly."""
    q = base.copy()
    q[0:3] += rng.uniform(-0.1, 0.1, 3)
    q[3:6] += rng.uniform(-0.2, 0.2, 3)
    legs = ((layout.Q1_L, layout.Q2_L, layout.Q3_L, layout.Q4_L, layout.Q7_L,
             layout.Q5_L, layout.Q6_L),
            (layout.Q1_R, layout.Q2_R, layout.Q3_R, layout.Q4_R, layout.Q7_R,
             layout.Q5_R, layout.Q6_R))
    for i1, i2, i3, i4, i7, i5, i6 in legs:
        q[i1] = rng.uniform(robot.q_min[i1] + 0.05, robot.q_max[i1] - 0.05)
        q[i2] = rng.uniform(-0.5, 0.5)
        q[i3] = rng.uniform(-0.4, 0.9)
        q[i4] = rng.uniform(-2.2, -0.6)
        q[i7] = rng.uniform(-1.0, 1.0)
        q[i5] = 0.0
        q[i6] = layout.TARSUS_COUPLING - q[i4]
    return q


def test_fk_round_trip(robot, q_home):
    rng = np.random.default_rng(42)
    for _ in range(20):
        q_star = random_feasible_config(robot, rng, q_home)
        rig = ik.rig_from_config(robot, q_star)
        res = ik.solve_ik(robot, rig, q_home)
        assert res.status == "converged"
        assert res.objective < 1e-10
        kr_sol = M.forward_kinematics(robot, res.q)
        kr_ref = M.forward_kinematics(robot, q_star)
        for side in ("left", "right"):
            np.testing.assert_allclose(kr_sol.foot_pos[side],
                                       kr_ref.foot_pos[side], atol=1e-6)


def test_spring_constraints_on_converged_solutions(robot, q_home):
    rng = np.random.default_rng(7)
    for _ in range(20):
        rig = ik.rig_from_config(robot, random_feasible_config(robot, rng, q_home))
        res = ik.solve_ik(robot, rig, q_home)
        assert res.status == "converged"
        for i5, i4, i6 in ((layout.Q5_L, layout.Q4_L, layout.Q6_L),
                           (layout.Q5_R, layout.Q4_R, layout.Q6_R)):
            assert abs(res.q[i5]) < 1e-8
            assert abs(res.q[i6] + res.q[i4] - layout.TARSUS_COUPLING) < 1e-8


def test_all_equality_residuals_below_tol(robot, q_home):
    rng = np.random.default_rng(11)
    for _ in range(100):
        rig = ik.rig_from_config(robot, random_feasible_config(robot, rng, q_home))
        res = ik.solve_ik(robot, rig, q_home)
        assert res.status == "converged"
        assert max(res.constraint_residuals.values()) < 1e-6


def test_unreachable_target_converges_to_boundary(robot, q_home):
    rig = ik.rig_from_config(robot, q_home)
    targets = dict(rig.foot_targets)
    targets["left"] = np.array([0.0, 0.135, -10.0])
    res = ik.solve_ik(robot, TargetRig(rig.pelvis_pose, targets,
                                       rig.leg_yaw_targets), q_home)
    assert res.status == "converged"
    assert res.objective > 1.0
    ll, _ = M.virtual_leg(robot, res.q)
    max_ll = M.leg_length_of_knee(robot, robot.q_max[layout.Q4_L])
    assert ll["left"] == pytest.approx(max_ll, abs=1e-6)


def test_infeasible_pelvis_pose_reported(robot, q_home):
    rig = ik.rig_from_config(robot, q_home)
    bad_pose = rig.pelvis_pose.copy()
    bad_pose[4] = 2.5   # pitch far beyond its limit
    res = ik.solve_ik(robot, TargetRig(bad_pose, rig.foot_targets,
                                       rig.leg_yaw_targets), q_home)
    assert res.status == "infeasible"
    assert "pelvis" in res.message
    assert max(res.constraint_residuals.values()) > 1.0


def test_objective_monotone_across_iterations(robot, q_home):
    rng = np.random.default_rng(13)
    for _ in range(10):
        rig = ik.rig_from_config(robot, random_feasible_config(robot, rng, q_home))
        res = ik.solve_ik(robot, rig, q_home)
        h = res.objective_history
        assert all(h[i + 1] <= h[i] + 1e-15 for i in range(len(h) - 1))


def test_translation_equivariance(robot, q_home):
    rng = np.random.default_rng(17)
    rig = ik.rig_from_config(robot, random_feasible_config(robot, rng, q_home))
    offset = np.array([0.8, -0.4, 0.15])
    shifted = TargetRig(rig.pelvis_pose + np.r_[offset, 0, 0, 0],
                        {s: rig.foot_targets[s] + offset for s in rig.foot_targets},
                        rig.leg_yaw_targets)
    r1 = ik.solve_ik(robot, rig, q_home)
    r2 = ik.solve_ik(robot, shifted, q_home)
    np.testing.assert_allclose(r2.q[0:3], r1.q[0:3] + offset, atol=1e-8)
    np.testing.assert_allclose(r2.q[layout.MOTORS], r1.q[layout.MOTORS], atol=1e-8)


def test_deterministic(robot, q_home):
    rng = np.random.default_rng(19)
    rig = ik.rig_from_config(robot, random_feasible_config(robot, rng, q_home))
    r1 = ik.solve_ik(robot, rig, q_home)
    r2 = ik.solve_ik(robot, rig, q_home)
    assert np.array_equal(r1.q, r2.q)
    assert r1.objective == r2.objective
