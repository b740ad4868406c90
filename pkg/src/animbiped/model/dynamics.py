"""Rigid-body dynamics: mass matrix, inverse dynamics, contact terms.

Everything runs in world frame with batched numpy arrays (leading dimensions
broadcast) and supports complex inputs for complex-step differentiation.

The two core algorithms are deliberately independent implementations:
``mass_matrix`` uses composite rigid bodies, ``inverse_dynamics`` a recursive
Newton-Euler pass, so each can serve as an oracle for the other.
"""

from __future__ import annotations

import numpy as np

from . import layout
from .kinematics import body_frames, joint_world_axes
from .spec import RobotModel

GRAVITY = 9.81


def _cross(a, b):
    # np.cross has large per-call overhead; spell it out
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out = np.empty(np.broadcast_shapes(a.shape, b.shape),
                   dtype=np.result_type(a, b))
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def _ancestors(model: RobotModel) -> list[list[int]]:
    out = []
    for i in range(model.nb):
        path = []
        j = i
        while j >= 0:
            path.append(j)
            j = model.parent[j]
        out.append(path)
    return out


def _forward_pass(model: RobotModel, q, qd, qdd, gravity, frames=None):
    """Velocity/acceleration recursion; returns (R, p, axes_w, w, v, dw, dv).

    w/v are angular/linear velocity, dw/dv accelerations, all of the body
    frame origin in world coordinates.  Gravity enters as a fictitious upward
    base acceleration.
    """
    q = np.asarray(q)
    qd = np.asarray(qd)
    qdd = np.asarray(qdd)
    batch = np.broadcast_shapes(q.shape[:-1], qd.shape[:-1], qdd.shape[:-1])
    dtype = complex if any(np.iscomplexobj(x) for x in (q, qd, qdd)) else float
    nb = model.nb

    R, p = body_frames(model, q) if frames is None else frames
    axes_w = joint_world_axes(model, R)

    w = np.zeros(batch + (nb, 3), dtype=dtype)
    v = np.zeros(batch + (nb, 3), dtype=dtype)
    dw = np.zeros(batch + (nb, 3), dtype=dtype)
    dv = np.zeros(batch + (nb, 3), dtype=dtype)

    a0 = np.zeros(batch + (3,), dtype=dtype)
    a0[..., 2] = gravity

    for i in range(nb):
        par = model.parent[i]
        qi_d = qd[..., model.q_index[i]]
        qi_dd = qdd[..., model.q_index[i]]
        a = axes_w[..., i, :]
        if par < 0:
            wp = np.zeros(batch + (3,), dtype=dtype)
            vp = wp
            dwp = wp
            dvp = a0
            d = p[..., i, :]
        else:
            wp, vp = w[..., par, :], v[..., par, :]
            dwp, dvp = dw[..., par, :], dv[..., par, :]
            d = p[..., i, :] - p[..., par, :]
        v_pt = vp + _cross(wp, d)
        a_pt = dvp + _cross(dwp, d) + _cross(wp, _cross(wp, d))
        if model.prismatic[i]:
            w[..., i, :] = wp
            dw[..., i, :] = dwp
            v[..., i, :] = v_pt + a * qi_d[..., None]
            dv[..., i, :] = a_pt + a * qi_dd[..., None] \
                + 2.0 * _cross(wp, a) * qi_d[..., None]
        else:
            w[..., i, :] = wp + a * qi_d[..., None]
            dw[..., i, :] = dwp + a * qi_dd[..., None] \
                + _cross(wp, a) * qi_d[..., None]
            v[..., i, :] = v_pt
            dv[..., i, :] = a_pt
    return R, p, axes_w, w, v, dw, dv


def inverse_dynamics(model: RobotModel, q, qd, qdd, ext_forces=(),
                     gravity: float = GRAVITY, frames=None):
    """Generalized forces tau with D(q) qdd + C(q,qd) qd + G(q) = tau + (ext terms).

    ``ext_forces`` is a sequence of (body_index, local_points (k,3),
    forces (..., k, 3)) world-frame forces applied at body-fixed points; they
    enter with a minus sign, i.e. the returned tau already has J^T f
    subtracted, so tau = ID(q,qd,qdd) - sum J_pt^T f.
    """
    R, p, axes_w, w, v, dw, dv = _forward_pass(model, q, qd, qdd, gravity,
                                               frames=frames)
    batch = w.shape[:-2]
    dtype = w.dtype
    nb = model.nb

    # net force f and moment n about each body origin
    f = np.zeros(batch + (nb, 3), dtype=dtype)
    n = np.zeros(batch + (nb, 3), dtype=dtype)
    for i in range(nb):
        m = model.body_mass[i]
        Ri = R[..., i, :, :]
        r_c = (Ri @ model.body_com[i])
        wi, dwi = w[..., i, :], dw[..., i, :]
        a_c = dv[..., i, :] + _cross(dwi, r_c) + _cross(wi, _cross(wi, r_c))
        Fi = m * a_c
        Iw = Ri @ model.body_inertia[i] @ np.swapaxes(Ri, -1, -2)
        Ni = np.einsum("...ij,...j->...i", Iw, dwi) \
            + _cross(wi, np.einsum("...ij,...j->...i", Iw, wi))
        f[..., i, :] = Fi
        n[..., i, :] = Ni + _cross(r_c, Fi)

    for body, local_pts, forces in ext_forces:
        Rb = R[..., body, :, :]
        pts = p[..., body, :][..., None, :] + \
            (np.atleast_2d(local_pts) @ np.swapaxes(Rb, -1, -2))
        Ftot = np.sum(forces, axis=-2)
        Ntot = np.sum(_cross(pts - p[..., body, :][..., None, :], forces), axis=-2)
        f[..., body, :] = f[..., body, :] - Ftot
        n[..., body, :] = n[..., body, :] - Ntot

    tau = np.zeros(batch + (layout.NQ,), dtype=dtype)
    for i in range(nb - 1, -1, -1):
        a = axes_w[..., i, :]
        if model.prismatic[i]:
            tau[..., model.q_index[i]] = np.sum(a * f[..., i, :], axis=-1)
        else:
            tau[..., model.q_index[i]] = np.sum(a * n[..., i, :], axis=-1)
        par = model.parent[i]
        if par >= 0:
            f[..., par, :] = f[..., par, :] + f[..., i, :]
            n[..., par, :] = n[..., par, :] + n[..., i, :] \
                + _cross(p[..., i, :] - p[..., par, :], f[..., i, :])
    return tau


def gravity_forces(model: RobotModel, q, gravity: float = GRAVITY):
    z = np.zeros(np.asarray(q).shape, dtype=float)
    return inverse_dynamics(model, q, z, z, gravity=gravity)


def bias_forces(model: RobotModel, q, qd, gravity: float = GRAVITY):
    """C(q,qd) qd + G(q)."""
    z = np.zeros(np.broadcast_shapes(np.asarray(q).shape, np.asarray(qd).shape))
    return inverse_dynamics(model, q, qd, z, gravity=gravity)


def point_accelerations(model: RobotModel, q, qd, qdd, body: int, local_pts,
                        frames=None):
    """Classical world acceleration of body-fixed points: J qdd + Jdot qd.

    Computed by the velocity/acceleration recursion with gravity off, so it
    is complex-step safe in any of q, qd, qdd.
    """
    R, p, _, w, v, dw, dv = _forward_pass(model, q, qd, qdd, 0.0, frames=frames)
    Rb = R[..., body, :, :]
    r = (np.atleast_2d(local_pts) @ np.swapaxes(Rb, -1, -2))
    wi = w[..., body, :][..., None, :]
    dwi = dw[..., body, :][..., None, :]
    return dv[..., body, :][..., None, :] + _cross(dwi, r) \
        + _cross(wi, _cross(wi, r))


def mass_matrix(model: RobotModel, q, frames=None):
    """Joint-space mass matrix D(q) via composite rigid bodies: (..., 20, 20)."""
    q = np.asarray(q)
    batch = q.shape[:-1]
    dtype = q.dtype if np.iscomplexobj(q) else float
    nb = model.nb

    R, p = body_frames(model, q) if frames is None else frames
    batch = p.shape[:-2]
    axes_w = joint_world_axes(model, R)
    com_w = p + (R @ model.body_com[:, :, None])[..., 0]
    Iw = R @ model.body_inertia @ np.swapaxes(R, -1, -2)

    mc = np.zeros(batch + (nb,), dtype=dtype)
    cc = np.zeros(batch + (nb, 3), dtype=dtype)
    Ic = np.zeros(batch + (nb, 3, 3), dtype=dtype)
    mc[...] = model.body_mass
    cc[...] = com_w
    Ic[...] = Iw

    def _shift(inertia, mass, d):
        # parallel-axis shift of an inertia about a displaced reference
        d2 = np.sum(d * d, axis=-1)[..., None, None]
        outer = d[..., :, None] * d[..., None, :]
        eye = np.zeros_like(outer)
        eye[..., 0, 0] = eye[..., 1, 1] = eye[..., 2, 2] = 1.0
        return inertia + mass[..., None, None] * (d2 * eye - outer)

    for i in range(nb - 1, 0, -1):
        par = model.parent[i]
        m_new = mc[..., par] + mc[..., i]
        c_new = (mc[..., par, None] * cc[..., par, :]
                 + mc[..., i, None] * cc[..., i, :]) / m_new[..., None]
        Ic[..., par, :, :] = (
            _shift(Ic[..., par, :, :], mc[..., par], cc[..., par, :] - c_new)
            + _shift(Ic[..., i, :, :], mc[..., i], cc[..., i, :] - c_new))
        mc[..., par] = m_new
        cc[..., par, :] = c_new

    D = np.zeros(batch + (layout.NQ, layout.NQ), dtype=dtype)
    ancestors = _ancestors(model)
    for i in range(nb):
        a_i = axes_w[..., i, :]
        if model.prismatic[i]:
            F = mc[..., i, None] * a_i
            N = np.zeros_like(F)
        else:
            lever = cc[..., i, :] - p[..., i, :]
            F = mc[..., i, None] * _cross(a_i, lever)
            N = np.einsum("...ij,...j->...i", Ic[..., i, :, :], a_i)
        col = model.q_index[i]
        for j in ancestors[i]:
            a_j = axes_w[..., j, :]
            row = model.q_index[j]
            if model.prismatic[j]:
                val = np.sum(a_j * F, axis=-1)
            else:
                arm = cc[..., i, :] - p[..., j, :]
                val = np.sum(a_j * (N + _cross(arm, F)), axis=-1)
            D[..., row, col] = val
            D[..., col, row] = val
    return D


def coriolis_matrix(model: RobotModel, q, qd):
    """Christoffel-consistent Coriolis matrix C(q, qd), shape (20, 20).

    Built from the symmetric bilinear form underlying the velocity-quadratic
    part of the bias: column j is B(qd, e_j) recovered by polarization from
    exact inverse-dynamics evaluations (no finite differencing).  This is the
    unique C for which dD/dt - 2C is skew-symmetric.
    """
    q = np.asarray(q, dtype=float)
    qd = np.asarray(qd, dtype=float)
    n = layout.NQ
    eye = np.eye(n)
    vels = np.concatenate([qd[None, :] + eye, eye, qd[None, :]], axis=0)
    qs = np.broadcast_to(q, (2 * n + 1, n))
    b = inverse_dynamics(model, qs, vels, np.zeros((2 * n + 1, n)), gravity=0.0)
    b_mixed, b_unit, b_v = b[:n], b[n:2 * n], b[2 * n]
    return 0.5 * (b_mixed - b_unit - b_v).T


def contact_jacobian(model: RobotModel, q, frames=None):
    """Stacked Jacobian of all four foot contact endpoints: (..., 12, 20).

    Row blocks: left heel, left toe, right heel, right toe (3 rows each).
    """
    from .kinematics import point_jacobian_from_frames
    R, p = body_frames(model, q) if frames is None else frames
    blocks = []
    for side in ("left", "right"):
        J = point_jacobian_from_frames(model, R, p, model.foot_body[side],
                                       model.feet[side].endpoints)
        blocks.append(J.reshape(J.shape[:-3] + (6, layout.NQ)))
    return np.concatenate(blocks, axis=-2)


def contact_point_acceleration(model: RobotModel, q, qd, qdd, frames=None):
    """J qdd + Jdot qd for the four contact endpoints, stacked (..., 12)."""
    R, p, _, w, v, dw, dv = _forward_pass(model, q, qd, qdd, 0.0, frames=frames)
    blocks = []
    for side in ("left", "right"):
        body = model.foot_body[side]
        Rb = R[..., body, :, :]
        r = (model.feet[side].endpoints @ np.swapaxes(Rb, -1, -2))
        wi = w[..., body, :][..., None, :]
        dwi = dw[..., body, :][..., None, :]
        acc = dv[..., body, :][..., None, :] + _cross(dwi, r) \
            + _cross(wi, _cross(wi, r))
        blocks.append(acc.reshape(acc.shape[:-2] + (6,)))
    return np.concatenate(blocks, axis=-1)


def contact_bias_acceleration(model: RobotModel, q, qd):
    """Jdot(q,qd) qd for the four contact endpoints, stacked (..., 12)."""
    z = np.zeros_like(np.asarray(qd, dtype=float))
    return contact_point_acceleration(model, q, qd, z)


def dynamics_terms(model: RobotModel, q, qd):
    """All terms of the contact-constrained manipulator equation.

    Returns a dict with D, bias (= C qd + G), B, J (stacked contact Jacobian
    of both feet) and Jdot_qd, consistent so that
    D qdd + bias = B u + J^T lam reproduces inverse dynamics.
    """
    q = layout.check_q(q)
    return {
        "D": mass_matrix(model, q),
        "bias": bias_forces(model, q, qd),
        "B": model.B.copy(),
        "J": contact_jacobian(model, q),
        "Jdot_qd": contact_bias_acceleration(model, q, qd),
    }


def total_energy(model: RobotModel, q, qd, gravity: float = GRAVITY):
    """Kinetic plus gravitational potential energy."""
    D = mass_matrix(model, q)
    T = 0.5 * np.einsum("...i,...ij,...j->...", qd, D, qd)
    R, p = body_frames(model, q)
    com_z = (p + (R @ model.body_com[:, :, None])[..., 0])[..., 2]
    V = gravity * np.sum(model.body_mass * com_z, axis=-1)
    return T + V
