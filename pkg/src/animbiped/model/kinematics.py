"""Forward kinematics, Jacobians and virtual-leg quantities.

All functions accept configurations with arbitrary leading batch dimensions,
shape (..., 20), and are safe to evaluate with complex inputs so callers can
use complex-step differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import layout
from .spec import RobotModel


def _eye3(batch_shape, dtype):
    I = np.zeros(batch_shape + (3, 3), dtype=dtype)
    I[..., 0, 0] = I[..., 1, 1] = I[..., 2, 2] = 1.0
    return I


def _skew(v):
    S = np.zeros(v.shape[:-1] + (3, 3), dtype=v.dtype)
    S[..., 0, 1] = -v[..., 2]
    S[..., 0, 2] = v[..., 1]
    S[..., 1, 0] = v[..., 2]
    S[..., 1, 2] = -v[..., 0]
    S[..., 2, 0] = -v[..., 1]
    S[..., 2, 1] = v[..., 0]
    return S


def _axis_rotation(axis, angle):
    """Rodrigues rotation about a fixed unit axis, batched over ``angle``."""
    a = np.asarray(axis, dtype=float)
    c = np.cos(angle)
    s = np.sin(angle)
    K = _skew(a)
    batch = angle.shape
    I = _eye3(batch, angle.dtype)
    return (I + s[..., None, None] * K
            + (1.0 - c)[..., None, None] * (K @ K))


def body_frames(model: RobotModel, q: np.ndarray):
    """World rotation R (..., nb, 3, 3) and origin p (..., nb, 3) per body."""
    q = np.asarray(q)
    batch = q.shape[:-1]
    dtype = q.dtype if np.iscomplexobj(q) else float
    R = np.zeros(batch + (model.nb, 3, 3), dtype=dtype)
    p = np.zeros(batch + (model.nb, 3), dtype=dtype)
    for i in range(model.nb):
        qi = q[..., model.q_index[i]]
        if model.parent[i] < 0:
            Rp = _eye3(batch, dtype)
            pp = np.zeros(batch + (3,), dtype=dtype)
        else:
            Rp = R[..., model.parent[i], :, :]
            pp = p[..., model.parent[i], :]
        Rj = Rp @ model.X_rot[i]
        pj = pp + (Rp @ model.X_trans[i])
        if model.prismatic[i]:
            R[..., i, :, :] = Rj
            p[..., i, :] = pj + qi[..., None] * (Rj @ model.axes[i])
        else:
            R[..., i, :, :] = Rj @ _axis_rotation(model.axes[i], qi)
            p[..., i, :] = pj
    return R, p


def joint_world_axes(model: RobotModel, R: np.ndarray):
    """World-frame joint axes (..., nb, 3) given body rotations.

    For joint i the motion axis rotates with the joint frame, which equals
    the body frame for the fixed-axis joints used here (the axis is invariant
    under the joint's own rotation).
    """
    return (R @ model.axes[:, :, None])[..., 0]


def body_points(R: np.ndarray, p: np.ndarray, body: int, local_pts: np.ndarray):
    """World positions of points fixed in a body frame; local_pts (k,3)."""
    return p[..., body, :][..., None, :] + \
        (local_pts @ np.swapaxes(R[..., body, :, :], -1, -2))


def com_position(model: RobotModel, R: np.ndarray, p: np.ndarray):
    """Whole-robot center of mass (..., 3)."""
    coms = p + (R @ model.body_com[:, :, None])[..., 0]
    total = model.body_mass.sum()
    return np.einsum("b,...bi->...i", model.body_mass, coms) / total


def foot_points(model: RobotModel, q: np.ndarray):
    """Contact endpoints per foot: dict side -> (..., 2, 3)."""
    R, p = body_frames(model, q)
    return {side: body_points(R, p, model.foot_body[side],
                              model.feet[side].endpoints)
            for side in ("left", "right")}


@dataclass
class KinematicsResult:
    """Cartesian quantities of one configuration (single, unbatched)."""
    foot_pos: dict[str, np.ndarray]        # foot center (midpoint of endpoints)
    foot_rot: dict[str, np.ndarray]        # foot frame orientation, 3x3
    foot_endpoints: dict[str, np.ndarray]  # (2,3) contact endpoints
    com: np.ndarray
    leg_length: dict[str, float]
    leg_angle: dict[str, float]


def forward_kinematics(model: RobotModel, q: np.ndarray) -> KinematicsResult:
    q = layout.check_q(q)
    R, p = body_frames(model, q)
    feet_pos, feet_rot, feet_eps = {}, {}, {}
    for side in ("left", "right"):
        b = model.foot_body[side]
        eps = body_points(R, p, b, model.feet[side].endpoints)
        feet_eps[side] = eps
        feet_pos[side] = eps.mean(axis=-2)
        feet_rot[side] = R[..., b, :, :]
    ll, la = virtual_leg(model, q, frames=(R, p))
    return KinematicsResult(foot_pos=feet_pos, foot_rot=feet_rot,
                            foot_endpoints=feet_eps,
                            com=com_position(model, R, p),
                            leg_length={s: ll[s] for s in ll},
                            leg_angle={s: la[s] for s in la})


def virtual_leg(model: RobotModel, q: np.ndarray, frames=None):
    """Virtual leg length and pitch per side.

    The virtual leg runs from the hip pitch pivot to the ankle pivot.  Its
    pitch is measured in the frame just above the hip pitch joint (after hip
    roll and yaw), as the deviation of the hip-to-ankle segment from straight
    down, positive when the ankle leads the hip.
    """
    R, p = body_frames(model, q) if frames is None else frames
    lengths, angles = {}, {}
    for side in ("left", "right"):
        hip_body = model.hip_pivot_body[side]
        foot_body = model.foot_body[side]
        hip = p[..., hip_body, :]
        ankle = p[..., foot_body, :] + (R[..., foot_body, :, :]
                                        @ model.feet[side].pivot)
        # frame above the hip pitch joint: parent body of the hip pitch joint
        parent = model.parent[hip_body]
        Rp = R[..., parent, :, :]
        v = np.einsum("...ji,...j->...i", Rp, ankle - hip)
        lengths[side] = np.sqrt(v[..., 0] ** 2 + v[..., 1] ** 2 + v[..., 2] ** 2)
        angles[side] = np.arctan2(-v[..., 0], -v[..., 2])
    return lengths, angles


def _ancestor_mask(model: RobotModel, body: int) -> np.ndarray:
    mask = np.zeros(model.nb, dtype=bool)
    i = body
    while i >= 0:
        mask[i] = True
        i = model.parent[i]
    return mask


def point_jacobian(model: RobotModel, q: np.ndarray, body: int,
                   local_pts: np.ndarray) -> np.ndarray:
    """Jacobian of world point positions w.r.t. q: (..., k, 3, 20).

    Geometric Jacobian: a revolute ancestor j contributes axis_j x (pt - o_j),
    a prismatic ancestor contributes axis_j.
    """
    R, p = body_frames(model, q)
    return point_jacobian_from_frames(model, R, p, body, local_pts)


def point_jacobian_from_frames(model: RobotModel, R, p, body: int,
                               local_pts: np.ndarray) -> np.ndarray:
    local_pts = np.atleast_2d(local_pts)
    pts = body_points(R, p, body, local_pts)           # (..., k, 3)
    batch = pts.shape[:-2]
    k = local_pts.shape[0]
    J = np.zeros(batch + (k, 3, layout.NQ), dtype=pts.dtype)
    axes_w = joint_world_axes(model, R)
    mask = _ancestor_mask(model, body)
    for j in np.flatnonzero(mask):
        a = axes_w[..., j, :]
        col = model.q_index[j]
        if model.prismatic[j]:
            J[..., :, :, col] = a[..., None, :]
        else:
            r = pts - p[..., j, :][..., None, :]
            J[..., :, :, col] = np.cross(a[..., None, :], r)
    return J


def com_jacobian(model: RobotModel, q: np.ndarray) -> np.ndarray:
    """Jacobian of the whole-robot CoM: (..., 3, 20)."""
    R, p = body_frames(model, q)
    total = model.body_mass.sum()
    batch = p.shape[:-2]
    J = np.zeros(batch + (3, layout.NQ), dtype=p.dtype)
    for b in range(model.nb):
        if model.body_mass[b] == 0.0:
            continue
        Jb = point_jacobian_from_frames(model, R, p, b, model.body_com[b])
        J = J + (model.body_mass[b] / total) * Jb[..., 0, :, :]
    return J


def point_velocity(model: RobotModel, q, qd, body: int, local_pts):
    """World velocity of body-fixed points, J(q) qd: (..., k, 3)."""
    J = point_jacobian(model, q, body, local_pts)
    return np.einsum("...kij,...j->...ki", J, np.asarray(qd))


def point_bias_acceleration(model: RobotModel, q, qd, body: int, local_pts,
                            step: float = 1e-20):
    """Jdot(q,qd) qd for body-fixed points via a complex directional step.

    With pv(q) = J(q) qd at frozen qd, the directional derivative of pv along
    qd equals Jdot qd exactly.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    qc = q + 1j * step * qd
    pv = point_velocity(model, qc, qd.astype(complex), body, local_pts)
    return pv.imag / step


# ---------------------------------------------------------------------------
# Virtual-leg closed relations used by the walking controller.

def leg_length_of_knee(model: RobotModel, q4, side: str = "left"):
    """Virtual leg length as a function of the knee angle alone.

    Valid when the spring constraints hold (q5 = 0, q6 = 13 deg - q4); the
    hip-to-ankle distance is then independent of the other joints.
    """
    q4 = np.asarray(q4, dtype=float)
    q = np.zeros(q4.shape + (layout.NQ,))
    i4 = layout.Q4_L if side == "left" else layout.Q4_R
    i6 = layout.Q6_L if side == "left" else layout.Q6_R
    q[..., i4] = q4
    q[..., i6] = layout.TARSUS_COUPLING - q4
    ll, _ = virtual_leg(model, q)
    return ll[side]


def knee_of_leg_length(model: RobotModel, ll_target: float,
                       side: str = "left") -> float:
    """Invert :func:`leg_length_of_knee` by bisection over the knee range."""
    i4 = layout.Q4_L if side == "left" else layout.Q4_R
    lo, hi = model.q_min[i4], model.q_max[i4]
    # leg length is monotone increasing in q4 on [q4_min, 0]
    f_lo = leg_length_of_knee(model, lo, side)
    f_hi = leg_length_of_knee(model, hi, side)
    t = min(max(ll_target, min(f_lo, f_hi) + 1e-9), max(f_lo, f_hi) - 1e-9)
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if (leg_length_of_knee(model, mid, side) - t) * (f_lo - t) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def leg_length_knee_gradient(model: RobotModel, q4: float,
                             side: str = "left") -> float:
    """d(leg length)/d(knee angle) via complex step."""
    h = 1e-20
    q4c = np.asarray(q4, dtype=complex) + 1j * h
    q = np.zeros((layout.NQ,), dtype=complex)
    i4 = layout.Q4_L if side == "left" else layout.Q4_R
    i6 = layout.Q6_L if side == "left" else layout.Q6_R
    q[i4] = q4c
    q[i6] = layout.TARSUS_COUPLING - q4c
    ll, _ = virtual_leg(model, q)
    return float(ll[side].imag / h)
