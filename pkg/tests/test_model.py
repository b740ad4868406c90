import numpy as np
import pytest
import yaml

from animbiped import model as M
from animbiped.model import layout


@pytest.fixture(scope="module")
def robot():
    return M.load_model()


def rand_q_in_limits(robot, rng, n=1):
    u = rng.uniform(size=(n, layout.NQ))
    lo = np.maximum(robot.q_min, -2.0)   # keep base translations desk-sized
    hi = np.minimum(robot.q_max, 2.0)
    # stay away from the pitch singularity
    lo[layout.PITCH], hi[layout.PITCH] = -1.0, 1.0
    q = lo + u * (hi - lo)
    return q[0] if n == 1 else q


# ---------------------------------------------------------------------------
# loading / validation

def test_load_bundled_model(robot):
    assert robot.nb == 20
    assert sum(j.actuated for j in robot.joints) == 10
    assert len(robot.links) == 15
    assert all(l.mass > 0 for l in robot.links)
    assert robot.u_max.shape == (10,)
    assert np.all(robot.u_max > 0)


def _write_variant(tmp_path, mutate):
    doc = yaml.safe_load(open(M.default_model_path()))
    mutate(doc)
    p = tmp_path / "variant.model"
    p.write_text(yaml.safe_dump(doc))
    return p


def test_zero_mass_link_rejected(tmp_path):
    def mutate(doc):
        doc["links"][3]["mass"] = 0.0
    with pytest.raises(M.ModelError, match="mass"):
        M.load_model(_write_variant(tmp_path, mutate))


def test_nine_actuated_joints_rejected(tmp_path):
    def mutate(doc):
        for j in doc["joints"]:
            if j["name"] == "toe_R":
                j["actuated"] = False
    with pytest.raises(M.ModelError, match="actuated"):
        M.load_model(_write_variant(tmp_path, mutate))


def test_non_spd_inertia_rejected(tmp_path):
    def mutate(doc):
        doc["links"][0]["inertia"] = [0.1, 0.1, -0.1, 0, 0, 0]
    with pytest.raises(M.ModelError, match="positive definite"):
        M.load_model(_write_variant(tmp_path, mutate))


def test_non_tree_topology_rejected(tmp_path):
    def mutate(doc):
        doc["joints"].append(dict(doc["joints"][-1]))
        doc["joints"][-1]["name"] = "toe_R_dup"
        doc["joints"][-1]["q_index"] = 15
    with pytest.raises(M.ModelError):
        M.load_model(_write_variant(tmp_path, mutate))


# ---------------------------------------------------------------------------
# forward kinematics

def test_neutral_standing_symmetry(robot):
    q = M.standing_pose(robot, 0.9)
    kr = M.forward_kinematics(robot, q)
    assert abs(kr.foot_pos["left"][1]) == pytest.approx(
        abs(kr.foot_pos["right"][1]), abs=1e-12)
    assert kr.foot_pos["left"][1] > 0 > kr.foot_pos["right"][1]
    np.testing.assert_allclose(kr.foot_endpoints["left"][:, 2], 0.0, atol=1e-12)


def test_floating_base_translation_equivariance(robot):
    rng = np.random.default_rng(3)
    q = rand_q_in_limits(robot, rng)
    q2 = q.copy()
    q2[layout.X] += 0.3
    a, b = M.forward_kinematics(robot, q), M.forward_kinematics(robot, q2)
    for side in ("left", "right"):
        np.testing.assert_allclose(
            b.foot_pos[side], a.foot_pos[side] + [0.3, 0, 0], atol=1e-12)
        np.testing.assert_allclose(
            b.foot_endpoints[side], a.foot_endpoints[side] + [0.3, 0, 0], atol=1e-12)
    np.testing.assert_allclose(b.com, a.com + [0.3, 0, 0], atol=1e-12)
    assert b.leg_length == a.leg_length and b.leg_angle == a.leg_angle


def _axis_rot(axis, t):
    c, s = np.cos(t), np.sin(t)
    if axis == (1, 0, 0):
        return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])
    if axis == (0, 1, 0):
        return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])
    if axis == (0, 0, 1):
        return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])
    raise AssertionError("oracle only handles principal axes")


def _oracle_link_transforms(robot, q):
    """Independent FK: compose 4x4 homogeneous transforms joint by joint."""
    def rpy(v):
        return (_axis_rot((0, 0, 1), v[2]) @ _axis_rot((0, 1, 0), v[1])
                @ _axis_rot((1, 0, 0), v[0]))

    T = {"world": np.eye(4)}
    chain = np.eye(4)
    for j in robot.joints:
        fixed = np.eye(4)
        fixed[:3, :3] = rpy(j.origin_rpy)
        fixed[:3, 3] = j.origin_xyz
        var = np.eye(4)
        qi = q[j.q_index]
        if j.kind == "base-translation":
            var[:3, 3] = j.axis * qi
        else:
            var[:3, :3] = _axis_rot(tuple(int(round(a)) for a in j.axis), qi)
        if j.parent == "world":
            chain = chain @ fixed @ var
            parent_T = chain
        else:
            parent_T = T[j.parent] @ fixed @ var
        if j.child != "__base__":
            T[j.child] = parent_T
    return T


def test_com_matches_chain_composition_oracle(robot):
    rng = np.random.default_rng(7)
    for _ in range(10):
        q = rand_q_in_limits(robot, rng)
        T = _oracle_link_transforms(robot, q)
        total = sum(l.mass for l in robot.links)
        com = sum(l.mass * (T[l.name] @ np.append(l.com, 1.0))[:3]
                  for l in robot.links) / total
        kr = M.forward_kinematics(robot, q)
        np.testing.assert_allclose(kr.com, com, atol=1e-10)
        # foot endpoints through the oracle too
        for side in ("left", "right"):
            Tf = T[robot.feet[side].link]
            eps = (robot.feet[side].endpoints @ Tf[:3, :3].T) + Tf[:3, 3]
            np.testing.assert_allclose(kr.foot_endpoints[side], eps, atol=1e-10)


# ---------------------------------------------------------------------------
# dynamics

def test_zero_velocity_bias_is_gravity(robot):
    rng = np.random.default_rng(11)
    q = rand_q_in_limits(robot, rng)
    np.testing.assert_allclose(M.bias_forces(robot, q, np.zeros(20)),
                               M.gravity_forces(robot, q), atol=1e-12)


def test_mass_matrix_vs_rnea_column_oracle(robot):
    rng = np.random.default_rng(13)
    for _ in range(5):
        q = rand_q_in_limits(robot, rng)
        D = M.mass_matrix(robot, q)
        G = M.gravity_forces(robot, q)
        cols = np.stack([M.inverse_dynamics(robot, q, np.zeros(20), col) - G
                         for col in np.eye(20)], axis=1)
        np.testing.assert_allclose(D, cols, atol=1e-10)


def test_mass_matrix_symmetric_positive_definite(robot):
    rng = np.random.default_rng(17)
    for q in rand_q_in_limits(robot, rng, n=20):
        D = M.mass_matrix(robot, q)
        assert np.abs(D - D.T).max() < 1e-10
        assert np.linalg.eigvalsh(D).min() > 0


def test_coriolis_skew_symmetry_against_fd_mass_matrix(robot):
    rng = np.random.default_rng(19)
    for _ in range(5):
        q = rand_q_in_limits(robot, rng)
        qd = rng.standard_normal(20)
        C = M.coriolis_matrix(robot, q, qd)
        dt = 1e-6
        Ddot = (M.mass_matrix(robot, q + dt * qd)
                - M.mass_matrix(robot, q - dt * qd)) / (2 * dt)
        S = Ddot - 2 * C
        for _ in range(5):
            v = rng.standard_normal(20)
            v /= np.linalg.norm(v)
            assert abs(v @ S @ v) < 1e-8


def test_inverse_dynamics_reproduces_actuation_residual(robot):
    rng = np.random.default_rng(23)
    q = rand_q_in_limits(robot, rng)
    qd, qdd = rng.standard_normal(20), rng.standard_normal(20)
    u = rng.standard_normal(10)
    lam = rng.standard_normal((4, 3))
    terms = M.dynamics_terms(robot, q, qd)
    lhs = terms["D"] @ qdd + terms["bias"]
    rhs = terms["B"] @ u + terms["J"].reshape(12, 20).T @ lam.ravel()
    residual = lhs - rhs
    ext = [(robot.foot_body["left"], robot.feet["left"].endpoints, lam[:2]),
           (robot.foot_body["right"], robot.feet["right"].endpoints, lam[2:])]
    tau = M.inverse_dynamics(robot, q, qd, qdd, ext_forces=ext)
    np.testing.assert_allclose(tau - terms["B"] @ u, residual, atol=1e-10)


def test_jacobians_match_finite_differences(robot):
    rng = np.random.default_rng(29)
    h = 1e-6
    for q in rand_q_in_limits(robot, rng, n=100):
        J = M.contact_jacobian(robot, q)
        k = rng.integers(0, 20)
        e = np.zeros(20)
        e[k] = h
        pp = M.foot_points(robot, q + e)
        pm = M.foot_points(robot, q - e)
        fd = np.concatenate([(pp[s] - pm[s]).reshape(6) for s in ("left", "right")]) / (2 * h)
        scale = max(1.0, np.abs(fd).max())
        assert np.abs(J[:, k] - fd).max() / scale < 1e-5


# ---------------------------------------------------------------------------
# virtual leg

def segment_lengths(robot):
    by_name = {j.name: j for j in robot.joints}
    thigh = abs(by_name["knee_L"].origin_xyz[2])
    shin = abs(by_name["tarsus_L"].origin_xyz[2])
    tarsus = abs(by_name["toe_L"].origin_xyz[2])
    return thigh, shin, tarsus


def test_knee_extended_leg_is_collinear(robot):
    q = np.zeros(layout.NQ)
    q[layout.Q4_L] = 0.0
    q[layout.Q6_L] = layout.TARSUS_COUPLING
    ll, _ = M.virtual_leg(robot, q)
    assert ll["left"] == pytest.approx(sum(segment_lengths(robot)), abs=1e-12)


def test_leg_length_monotone_in_knee(robot):
    i4 = layout.Q4_L
    knees = np.linspace(robot.q_min[i4], robot.q_max[i4], 40)
    lls = M.leg_length_of_knee(robot, knees)
    assert np.all(np.diff(lls) > 0)


def test_neutral_leg_angle_zero(robot):
    q = M.standing_pose(robot, 0.9)
    _, la = M.virtual_leg(robot, q)
    assert abs(la["left"]) < 1e-9 and abs(la["right"]) < 1e-9


def test_knee_of_leg_length_round_trip(robot):
    for ll in (0.5, 0.7, 0.9):
        q4 = M.knee_of_leg_length(robot, ll)
        assert M.leg_length_of_knee(robot, q4) == pytest.approx(ll, abs=1e-9)


def test_mirror_matrix_reflects_kinematics(robot):
    rng = np.random.default_rng(31)
    S = layout.mirror_matrix()
    refl = np.diag([1.0, -1.0, 1.0])
    for _ in range(5):
        q = rand_q_in_limits(robot, rng)
        kr = M.forward_kinematics(robot, q)
        km = M.forward_kinematics(robot, S @ q)
        np.testing.assert_allclose(km.foot_pos["left"], refl @ kr.foot_pos["right"],
                                   atol=1e-10)
        np.testing.assert_allclose(km.com, refl @ kr.com, atol=1e-10)
