"""Segmented trajectory optimization for standing motions.

An animated standing motion is cut into overlapping sub-motion windows, each
starting at a keyframe.  Every window becomes one trapezoidal-collocation
program over (time dilation, q, qd, qdd, u, contact forces) that minimizes
torque plus weighted animation-tracking error subject to dynamics, pinned
feet, friction cones, a support-region constraint on the CoM, and junction
continuity of the pelvis state with the previous window.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from ..animio import Frame, Motion
from ..model import layout
from ..model.dynamics import (
    contact_jacobian,
    contact_point_acceleration,
    inverse_dynamics,
    mass_matrix,
)
from ..model.kinematics import body_frames, body_points, com_position
from ..model.spec import RobotModel
from .nlp import (ConstraintBlock, NlpOptions, NlpProblem, NlpSolution,
                  scale_problem, solve_nlp)

NV = 86   # per-node variables: q(20) v(20) a(20) u(10) lam(12) lam_s(4)
_CS_STEP = 1e-20


class StandingOptError(RuntimeError):
    pass


@dataclass
class StandingOptConfig:
    c_normal: float = 1500.0
    c_keyframe: float = 1.0e4
    c_end: float = 1.0e5
    mu: float = 0.6
    dilation: tuple[float, float] = (1.0, 4.0)
    n_target: int = 50
    n_max: int | None = None        # default 3 * n_target
    v_bound: float = 30.0
    a_bound: float = 600.0
    lam_bound: float = 2000.0
    nlp: NlpOptions = field(default_factory=lambda: NlpOptions(
        tol_feas=2e-7, tol_stat=5e-5, max_outer=14, max_inner=40,
        mu0=1e5, mu_max=1e8, init_multipliers="lsq"))

    def __post_init__(self):
        if not (self.c_normal < self.c_keyframe < self.c_end):
            raise ValueError("weights must satisfy c_normal < c_keyframe < c_end")
        if self.mu <= 0:
            raise ValueError("friction coefficient must be > 0")
        if not (1.0 <= self.dilation[0] < self.dilation[1]):
            raise ValueError("dilation bounds must satisfy 1 <= lo < hi")


@dataclass
class SubMotionWindow:
    k0: int                      # first node index into the motion (inclusive)
    kt: int                      # last node index (inclusive)
    delta: int                   # overlap with the previous window, nodes
    frames: list[Frame]
    prev_end: tuple[np.ndarray, np.ndarray] | None = None   # pelvis (q^p, qd^p)

    @property
    def n(self) -> int:
        return self.kt - self.k0 + 1


def segment_motion(motion: Motion, n_target: int,
                   n_max: int | None = None) -> list[SubMotionWindow]:
    """Cut a motion into keyframe-aligned windows of roughly n_target nodes.

    Window boundaries are keyframes; consecutive windows share the boundary
    node (overlap delta = 1).  Keyframe counts per window differ by at most
    one because whole keyframe intervals are distributed evenly.
    """
    N = len(motion.frames)
    n_max = n_max or 3 * n_target
    kf = np.flatnonzero(motion.keyframe_flags)
    if N <= n_target:
        return [SubMotionWindow(k0=0, kt=N - 1, delta=0, frames=list(motion.frames))]
    gaps = np.diff(kf)
    if gaps.max() + 1 > n_max:
        g = int(np.argmax(gaps))
        raise StandingOptError(
            f"keyframe gap of {gaps.max()} nodes (frames {kf[g]}..{kf[g+1]}) "
            f"exceeds the maximum window size {n_max}; re-author the motion "
            "with intermediate keyframes")
    n_intervals = len(kf) - 1
    n_windows = int(np.clip(round((N - 1) / max(n_target - 1, 1)),
                            1, n_intervals))
    base, rem = divmod(n_intervals, n_windows)
    counts = [base + (1 if w < rem else 0) for w in range(n_windows)]
    windows = []
    i = 0
    for w, cnt in enumerate(counts):
        k0, kt = int(kf[i]), int(kf[i + cnt])
        windows.append(SubMotionWindow(k0=k0, kt=kt, delta=0 if w == 0 else 1,
                                       frames=list(motion.frames[k0:kt + 1])))
        i += cnt
    # postconditions
    assert windows[0].k0 == 0 and windows[-1].kt == N - 1
    for a, b in zip(windows, windows[1:]):
        assert b.k0 == a.kt
    return windows


# ---------------------------------------------------------------------------

def _friction_faces(mu: float) -> np.ndarray:
    """Rows (8, 3) with [cx, cy, cn]: cx tx + cy ty <= cn * N, inscribed pyramid."""
    ang = np.arange(8) * (2 * np.pi / 8)
    mu_hat = mu * np.cos(np.pi / 8)
    return np.stack([np.cos(ang), np.sin(ang), np.full(8, mu_hat)], axis=1)


def _hull_slot_order(eps_l: np.ndarray, eps_r: np.ndarray):
    """Fixed cyclic order of the 4 contact endpoints with CCW orientation.

    Slots are (side, endpoint-index); order chosen from the given frame and
    frozen for all nodes (feet do not cross during standing).
    """
    slots = [("right", 0), ("right", 1), ("left", 1), ("left", 0)]
    pts = {("left", 0): eps_l[0, :2], ("left", 1): eps_l[1, :2],
           ("right", 0): eps_r[0, :2], ("right", 1): eps_r[1, :2]}
    area = 0.0
    for i in range(4):
        a, b = pts[slots[i]], pts[slots[(i + 1) % 4]]
        area += a[0] * b[1] - a[1] * b[0]
    if area < 0:
        slots = slots[::-1]
        area = -area
    if area < 1e-6:
        raise StandingOptError("degenerate support region; feet too close")
    return slots


class WindowProblem:
    """NLP assembly for one standing sub-motion window."""

    def __init__(self, model: RobotModel, window: SubMotionWindow,
                 config: StandingOptConfig, pin_targets: dict,
                 hull_slots, final: bool):
        self.model = model
        self.cfg = config
        self.win = window
        self.final = final
        self.hull_slots = hull_slots
        self.pin = pin_targets                  # {"toe_r": (3,), "heel_r": (3,)}
        self.n = window.n
        self.t_ani = np.array([f.t for f in window.frames])
        self.dt0 = np.diff(self.t_ani)
        self.q_ani = np.stack([f.q for f in window.frames])
        self.c_node = np.where(np.array([f.keyframe for f in window.frames]),
                               config.c_keyframe, config.c_normal)
        self.c_node[-1] = config.c_end
        n = self.n
        self.nz = 1 + NV * n
        base = 1 + NV * np.arange(n)[:, None]
        self.IQ = base + np.arange(20)
        self.IV = base + 20 + np.arange(20)
        self.IA = base + 40 + np.arange(20)
        self.IU = base + 60 + np.arange(10)
        self.IL = base + 70 + np.arange(12)
        self.ILS = base + 82 + np.arange(4)
        # spring-constraint Jacobian rows: q5 = 0 and q4 + q6 = 13 deg per leg
        Js = np.zeros((4, 20))
        Js[0, layout.Q5_L] = 1.0
        Js[1, layout.Q4_L] = Js[1, layout.Q6_L] = 1.0
        Js[2, layout.Q5_R] = 1.0
        Js[3, layout.Q4_R] = Js[3, layout.Q6_R] = 1.0
        self.Js = Js
        self._spring_rhs = np.array([0.0, layout.TARSUS_COUPLING,
                                     0.0, layout.TARSUS_COUPLING])
        self._val_key = None
        self._val = None
        self._jac_key = None
        self._jac = None
        self._ep_local = {s: model.feet[s].endpoints for s in ("left", "right")}
        self._foot_body = model.foot_body
        self._build_friction_matrix()
        if window.prev_end is None:
            self.prev_qp = self.q_ani[0, 0:6].copy()
            self.prev_vp = np.zeros(6)
        else:
            self.prev_qp, self.prev_vp = window.prev_end

    # ---- variable helpers ----
    def split(self, x):
        return (x[..., 0], x[..., self.IQ], x[..., self.IV], x[..., self.IA],
                x[..., self.IU], x[..., self.IL])

    def split_full(self, x):
        return self.split(x) + (x[..., self.ILS],)

    def _ext_forces(self, LAM):
        l = LAM[..., 0:6].reshape(LAM.shape[:-1] + (2, 3))
        r = LAM[..., 6:12].reshape(LAM.shape[:-1] + (2, 3))
        return [(self._foot_body["left"], self._ep_local["left"], l),
                (self._foot_body["right"], self._ep_local["right"], r)]

    def _dyn_residual(self, Q, V, A, U, LAM, LAMS, frames=None):
        tau = inverse_dynamics(self.model, Q, V, A,
                               ext_forces=self._ext_forces(LAM), frames=frames)
        return tau - U @ self.model.B.T - LAMS @ self.Js

    def _kin_rows(self, Q, frames=None):
        """15 kinematic rows per node: foot pins (7), support (4), box (4)."""
        R, p = body_frames(self.model, Q) if frames is None else frames
        eps = {s: body_points(R, p, self._foot_body[s], self._ep_local[s])
               for s in ("left", "right")}
        com = com_position(self.model, R, p)
        rows = np.zeros(Q.shape[:-1] + (15,), dtype=p.dtype)
        rows[..., 0:3] = eps["right"][..., 1, :] - self.pin["toe_r"]
        rows[..., 3:5] = eps["right"][..., 0, 1:] - self.pin["heel_r"][1:]
        rows[..., 5] = eps["left"][..., 0, 2]
        rows[..., 6] = eps["left"][..., 1, 2]
        pts = [eps[s][..., i, 0:2] for s, i in self.hull_slots]
        for i in range(4):
            a, b = pts[i], pts[(i + 1) % 4]
            e = b - a
            w = com[..., 0:2] - a
            rows[..., 7 + i] = e[..., 0] * w[..., 1] - e[..., 1] * w[..., 0]
        c_l = eps["left"].mean(axis=-2)
        rows[..., 11] = 10.0 - c_l[..., 0]
        rows[..., 12] = c_l[..., 0] + 10.0
        rows[..., 13] = 10.0 - c_l[..., 1]
        rows[..., 14] = c_l[..., 1] + 10.0
        return rows

    # ---- cached value/jacobian bundles (batched over leading dims of x) ----
    def _values(self, x):
        key = (x.shape, x.tobytes())
        if self._val_key == key:
            return self._val
        s, Q, V, A, U, LAM, LAMS = self.split_full(x)
        frames = body_frames(self.model, Q)
        kin = self._kin_rows(Q, frames=frames)
        dyn = self._dyn_residual(Q, V, A, U, LAM, LAMS, frames=frames)
        cacc = contact_point_acceleration(self.model, Q, V, A, frames=frames)
        self._val = {"s": s, "Q": Q, "V": V, "A": A, "U": U, "LAM": LAM,
                     "kin": kin, "dyn": dyn, "cacc": cacc, "frames": frames}
        self._val_key = key
        return self._val

    def _cs_q(self, fun, Q):
        """Complex-step Jacobian of fun(Q) w.r.t. q per node: (n, rows, 20).

        ``fun`` must accept a batched configuration array of shape
        (n, 20, 20) and return (n, 20, rows).
        """
        Qc = np.repeat(Q[:, None, :], 20, axis=1).astype(complex)
        Qc += 1j * _CS_STEP * np.eye(20)
        return np.moveaxis(fun(Qc).imag, 1, -1) / _CS_STEP

    def _jacobians(self, x):
        key = x.tobytes()
        if self._jac_key == key:
            return self._jac
        vals = self._values(x)
        s, Q, V, A, U, LAM = (vals[k] for k in ("s", "Q", "V", "A", "U", "LAM"))
        n = self.n
        frames = vals["frames"]

        LAMS = x[..., self.ILS]
        # one complex FK over all q-perturbations, shared by every q-Jacobian
        Qc = np.repeat(Q[:, None, :], 20, axis=1).astype(complex)
        Qc += 1j * _CS_STEP * np.eye(20)
        frames_c = body_frames(self.model, Qc)

        def cs(vals):
            return np.moveaxis(vals.imag, 1, -1) / _CS_STEP

        dyn_q = cs(self._dyn_residual(Qc, V[:, None], A[:, None], U[:, None],
                                      LAM[:, None], LAMS[:, None],
                                      frames=frames_c))
        cacc_q = cs(contact_point_acceleration(self.model, Qc, V[:, None],
                                               A[:, None], frames=frames_c))
        kin_q = cs(self._kin_rows(Qc, frames=frames_c))

        Vc = np.repeat(V[:, None, :], 20, axis=1).astype(complex)
        Vc += 1j * _CS_STEP * np.eye(20)
        frames_b = (frames[0][:, None], frames[1][:, None])
        dyn_v = cs(self._dyn_residual(Q[:, None], Vc, A[:, None], U[:, None],
                                      LAM[:, None], LAMS[:, None],
                                      frames=frames_b))
        cacc_v = cs(contact_point_acceleration(self.model, Q[:, None], Vc,
                                               A[:, None], frames=frames_b))
        D = mass_matrix(self.model, Q, frames=frames)
        Jc = contact_jacobian(self.model, Q, frames=frames)     # (n,12,20)

        self._jac = {"dyn_q": dyn_q, "dyn_v": dyn_v, "D": D, "Jc": Jc,
                     "cacc_q": cacc_q, "cacc_v": cacc_v, "kin_q": kin_q}
        self._jac_key = key
        return self._jac

    # ---- constraint blocks (value callbacks accept batched x) ----
    def _defect_fun(self, x):
        s, Q, V, A, _, _ = self.split(x)
        h = (np.asarray(s)[..., None] * self.dt0)[..., None]
        dq = Q[..., 1:, :] - Q[..., :-1, :] - 0.5 * h * (V[..., 1:, :] + V[..., :-1, :])
        dv = V[..., 1:, :] - V[..., :-1, :] - 0.5 * h * (A[..., 1:, :] + A[..., :-1, :])
        out = np.concatenate([dq, dv], axis=-2)
        return out.reshape(out.shape[:-2] + (-1,))

    def _defect_jac(self, x):
        s, Q, V, A, _, _ = self.split(x)
        n = self.n
        rows, cols, data = [], [], []
        eye = np.arange(20)

        def add(r0, colidx, vals):
            rows.append(r0)
            cols.append(colidx)
            data.append(vals)

        for k in range(n - 1):
            h = s * self.dt0[k]
            rq = 20 * k + eye
            add(rq, self.IQ[k + 1], np.ones(20))
            add(rq, self.IQ[k], -np.ones(20))
            add(rq, self.IV[k], np.full(20, -0.5 * h))
            add(rq, self.IV[k + 1], np.full(20, -0.5 * h))
            add(rq, np.zeros(20, dtype=int),
                -0.5 * self.dt0[k] * (V[k] + V[k + 1]))
            rv = 20 * (n - 1) + 20 * k + eye
            add(rv, self.IV[k + 1], np.ones(20))
            add(rv, self.IV[k], -np.ones(20))
            add(rv, self.IA[k], np.full(20, -0.5 * h))
            add(rv, self.IA[k + 1], np.full(20, -0.5 * h))
            add(rv, np.zeros(20, dtype=int),
                -0.5 * self.dt0[k] * (A[k] + A[k + 1]))
        return sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(40 * (n - 1), self.nz)).tocsr()

    def _node_block(self, mats, idx_groups):
        """Assemble per-node dense blocks into one sparse (n*rows, nz) matrix."""
        n = self.n
        nrows = mats[0].shape[1]
        data, rows, cols = [], [], []
        for M, idx in zip(mats, idx_groups):
            ncols = M.shape[2]
            r = (np.arange(n * nrows).reshape(n, nrows, 1)
                 + np.zeros((1, 1, ncols), dtype=int))
            c = np.broadcast_to(idx[:, None, :], (n, nrows, ncols))
            rows.append(r.ravel())
            cols.append(c.ravel())
            data.append(np.ascontiguousarray(M).ravel())
        return sp.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n * nrows, self.nz)).tocsr()

    def _dyn_fun(self, x):
        dyn = self._values(x)["dyn"]
        return dyn.reshape(dyn.shape[:-2] + (-1,))

    def _dyn_jac(self, x):
        j = self._jacobians(x)
        Blam = -np.swapaxes(j["Jc"], -1, -2)                 # (n,20,12)
        Bu = np.broadcast_to(-self.model.B, (self.n, 20, 10))
        Bls = np.broadcast_to(-self.Js.T, (self.n, 20, 4))
        return self._node_block([j["dyn_q"], j["dyn_v"], j["D"], Bu, Blam, Bls],
                                [self.IQ, self.IV, self.IA, self.IU, self.IL,
                                 self.ILS])

    def _cacc_fun(self, x):
        cacc = self._values(x)["cacc"]
        return cacc.reshape(cacc.shape[:-2] + (-1,))

    def _cacc_jac(self, x):
        j = self._jacobians(x)
        return self._node_block([j["cacc_q"], j["cacc_v"], j["Jc"]],
                                [self.IQ, self.IV, self.IA])

    def _kin_slice_fun(self, x, lo, hi):
        kin = self._values(x)["kin"][..., lo:hi]
        return kin.reshape(kin.shape[:-2] + (-1,))

    def _kin_eq_fun(self, x):
        return self._kin_slice_fun(x, 0, 7)

    def _kin_eq_jac(self, x):
        return self._node_block([self._jacobians(x)["kin_q"][:, 0:7]], [self.IQ])

    def _support_fun(self, x):
        return self._kin_slice_fun(x, 7, 11)

    def _support_jac(self, x):
        return self._node_block([self._jacobians(x)["kin_q"][:, 7:11]], [self.IQ])

    def _box_fun(self, x):
        return self._kin_slice_fun(x, 11, 15)

    def _box_jac(self, x):
        return self._node_block([self._jacobians(x)["kin_q"][:, 11:15]], [self.IQ])

    def _linear_rows_matrix(self, idx):
        """Constant (4n, nz) matrix applying the spring rows at index group idx."""
        rows, cols, data = [], [], []
        for k in range(self.n):
            for r in range(4):
                for c in np.flatnonzero(self.Js[r]):
                    rows.append(4 * k + r)
                    cols.append(idx[k, c])
                    data.append(self.Js[r, c])
        return sp.coo_matrix((data, (rows, cols)),
                             shape=(4 * self.n, self.nz)).tocsr()

    def _spring_pos_fun(self, x):
        Q = x[..., self.IQ]
        out = Q @ self.Js.T - self._spring_rhs
        return out.reshape(out.shape[:-2] + (-1,))

    def _spring_acc_fun(self, x):
        A = x[..., self.IA]
        out = A @ self.Js.T
        return out.reshape(out.shape[:-2] + (-1,))

    def _stitch_fun(self, x):
        _, Q, V, A, _, _ = self.split_full(x)[:6]
        if self.win.prev_end is not None:
            return np.concatenate([Q[..., 0, 0:6] - self.prev_qp,
                                   V[..., 0, 0:6] - self.prev_vp], axis=-1)
        # first window: the motion starts from standstill at the first frame
        return np.concatenate([Q[..., 0, 0:6] - self.prev_qp,
                               V[..., 0, :], A[..., 0, :]], axis=-1)

    @property
    def _stitch_dim(self) -> int:
        return 12 if self.win.prev_end is not None else 46

    def _stitch_jac(self, x):
        J = sp.lil_matrix((self._stitch_dim, self.nz))
        J[np.arange(6), self.IQ[0, 0:6]] = 1.0
        if self.win.prev_end is not None:
            J[6 + np.arange(6), self.IV[0, 0:6]] = 1.0
        else:
            J[6 + np.arange(20), self.IV[0]] = 1.0
            J[26 + np.arange(20), self.IA[0]] = 1.0
        return J.tocsr()

    def _terminal_fun(self, x):
        # the motion ends at full rest: translation-only pelvis velocity (the
        # literal reading) lets the solution "bow out" with free kinetic
        # energy at the final node, which breaks reproduction of statically
        # balanced inputs and leaves a trapezoidal endpoint transient
        V, A = self.split(x)[2], self.split(x)[3]
        return np.concatenate([V[..., -1, :], A[..., -1, :]], axis=-1)

    def _terminal_jac(self, x):
        J = sp.lil_matrix((40, self.nz))
        J[np.arange(20), self.IV[-1]] = 1.0
        J[20 + np.arange(20), self.IA[-1]] = 1.0
        return J.tocsr()

    def _build_friction_matrix(self):
        faces = _friction_faces(self.cfg.mu)     # (8,3)
        n = self.n
        rows, cols, data = [], [], []
        for k in range(n):
            for foot in range(2):                # 0 left, 1 right
                lam_idx = self.IL[k, 6 * foot: 6 * foot + 6]
                for i in range(8):
                    r = 16 * k + 8 * foot + i
                    cx, cy, cn = faces[i]
                    for ep in range(2):
                        rows += [r, r, r]
                        cols += [lam_idx[3 * ep], lam_idx[3 * ep + 1],
                                 lam_idx[3 * ep + 2]]
                        data += [-cx, -cy, cn]
        self._Jfric = sp.coo_matrix((data, (rows, cols)),
                                    shape=(16 * n, self.nz)).tocsr()

    def _fric_fun(self, x):
        if x.ndim == 1:
            return self._Jfric @ x
        flat = x.reshape(-1, self.nz)
        return (self._Jfric @ flat.T).T.reshape(x.shape[:-1] + (16 * self.n,))

    def _fric_jac(self, x):
        return self._Jfric

    # ---- objective ----
    def _objective_batch(self, x):
        _, Q, _, _, U, _ = self.split(x)
        dq = Q - self.q_ani
        return (np.sum(U * U, axis=(-2, -1))
                + np.sum(self.c_node[:, None] * dq * dq, axis=(-2, -1)))

    def objective(self, x):
        return float(self._objective_batch(x))

    def gradient(self, x):
        _, Q, _, _, U, _ = self.split(x)
        g = np.zeros(self.nz)
        g[self.IU] = 2.0 * U
        g[self.IQ] = 2.0 * self.c_node[:, None] * (Q - self.q_ani)
        return g

    def hess_diag(self, x):
        h = np.zeros(self.nz)
        h[self.IU] = 2.0
        h[self.IQ] = 2.0 * self.c_node[:, None] * np.ones((1, 20))
        return h

    # ---- problem assembly ----
    def build(self) -> NlpProblem:
        n = self.n
        lb = np.full(self.nz, -np.inf)
        ub = np.full(self.nz, np.inf)
        lb[0], ub[0] = self.cfg.dilation
        lb[self.IQ] = self.model.q_min
        ub[self.IQ] = self.model.q_max
        lb[self.IV], ub[self.IV] = -self.cfg.v_bound, self.cfg.v_bound
        lb[self.IA], ub[self.IA] = -self.cfg.a_bound, self.cfg.a_bound
        lb[self.IU] = -self.model.u_max
        ub[self.IU] = self.model.u_max
        lb[self.IL], ub[self.IL] = -self.cfg.lam_bound, self.cfg.lam_bound
        lb[self.IL[:, 2::3]] = 0.0                       # normal forces >= 0
        lb[self.ILS], ub[self.ILS] = -self.cfg.lam_bound, self.cfg.lam_bound

        def blk(name, dim, fun, jac, kind, weight=1.0):
            return ConstraintBlock(name, dim, fun, jac, kind, fun_batch=fun,
                                   weight=weight)

        Jsp = self._linear_rows_matrix(self.IQ)
        Jsa = self._linear_rows_matrix(self.IA)
        blocks = [
            blk("defects", 40 * (n - 1), self._defect_fun, self._defect_jac,
                "eq", weight=0.01),
            blk("dynamics", 20 * n, self._dyn_fun, self._dyn_jac, "eq"),
            blk("contact_acc", 12 * n, self._cacc_fun, self._cacc_jac, "eq"),
            blk("foot_pins", 7 * n, self._kin_eq_fun, self._kin_eq_jac, "eq"),
            blk("spring_pos", 4 * n, self._spring_pos_fun, lambda x: Jsp, "eq"),
            blk("spring_acc", 4 * n, self._spring_acc_fun, lambda x: Jsa, "eq"),
            blk("pelvis_stitch", self._stitch_dim, self._stitch_fun,
                self._stitch_jac, "eq"),
            blk("friction", 16 * n, self._fric_fun, self._fric_jac, "ineq"),
            blk("support_region", 4 * n, self._support_fun, self._support_jac,
                "ineq"),
            blk("left_foot_box", 4 * n, self._box_fun, self._box_jac, "ineq"),
        ]
        if self.final:
            blocks.append(blk("terminal_rest", 40, self._terminal_fun,
                              self._terminal_jac, "eq"))
        return NlpProblem(n=self.nz, lb=lb, ub=ub, objective=self.objective,
                          gradient=self.gradient, blocks=blocks,
                          hess_diag=self.hess_diag,
                          objective_batch=self._objective_batch,
                          name=f"standing[{self.win.k0}:{self.win.kt}]")

    def warm_start(self, s0: float = 2.0) -> np.ndarray:
        n = self.n
        x = np.zeros(self.nz)
        x[0] = s0
        Q = self.q_ani.copy()
        t = np.concatenate([[0.0], np.cumsum(self.dt0 * s0)])
        V = np.gradient(Q, t, axis=0) if n > 1 else np.zeros_like(Q)
        A = np.gradient(V, t, axis=0) if n > 1 else np.zeros_like(Q)
        x[self.IQ], x[self.IV], x[self.IA] = Q, V, A
        if self.win.prev_end is not None:
            x[self.IQ[0, 0:6]] = self.prev_qp
            x[self.IV[0, 0:6]] = self.prev_vp
        tau = inverse_dynamics(self.model, x[self.IQ], V, A)
        Jc = contact_jacobian(self.model, x[self.IQ])
        unactuated = np.ones(20, dtype=bool)
        unactuated[layout.MOTORS] = False
        gear = np.diag(self.model.B[layout.MOTORS])
        for k in range(n):
            # fit forces to the unactuated rows, clip, then refit the whole
            # 20-row system with the clipped components frozen
            JT = np.concatenate([Jc[k].T, self.Js.T], axis=1)
            lam = np.linalg.lstsq(JT[unactuated], tau[k][unactuated],
                                  rcond=None)[0]
            lam[2:12:3] = np.maximum(lam[2:12:3], 0.0)
            u = np.clip((tau[k] - JT @ lam)[layout.MOTORS] / gear,
                        -self.model.u_max, self.model.u_max)
            resid = tau[k] - self.model.B @ u - JT @ lam
            dlam = np.linalg.lstsq(JT, resid, rcond=None)[0]
            lam = lam + dlam
            lam[2:12:3] = np.maximum(lam[2:12:3], 0.0)
            x[self.IU[k]] = u
            x[self.IL[k]] = lam[:12]
            x[self.ILS[k]] = lam[12:]
        return x

    def x_scale(self) -> np.ndarray:
        """Characteristic variable magnitudes for solver conditioning."""
        s = np.ones(self.nz)
        s[self.IQ] = 0.3
        s[self.IV] = 2.0
        s[self.IA] = 30.0
        s[self.IU] = 3.0
        s[self.IL] = 100.0
        s[self.ILS] = 30.0
        s[0] = 0.3
        return s

    def block_violations(self, x) -> dict[str, float]:
        out = {}
        for b in self.build().blocks:
            v = np.atleast_1d(b.fun(x))
            out[b.name] = float(np.abs(v).max() if b.kind == "eq"
                                else np.maximum(-v, 0.0).max())
        return out


# ---------------------------------------------------------------------------

@dataclass
class StandingReport:
    windows: list[dict]
    times: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    A: np.ndarray
    U: np.ndarray
    LAM: np.ndarray
    LAMS: np.ndarray
    junction_residuals: list[float]
    hull_slots: list = None

    @property
    def total_dilation(self) -> float:
        return float(self.times[-1] / max(t := self.windows[-1]["t_ani_end"], 1e-9))


def _normalize_standing_motion(model, motion: Motion):
    """Shift the motion so the right foot center starts at the origin."""
    q0 = motion.frames[0].q
    from ..model.kinematics import foot_points
    eps = foot_points(model, q0)
    for side in ("left", "right"):
        if np.abs(eps[side][:, 2]).max() > 0.05:
            raise StandingOptError(
                f"{side} foot is {np.abs(eps[side][:, 2]).max():.3f} m off the "
                "ground in the first frame; standing motions need both feet "
                "on the ground")
    center_r = eps["right"].mean(axis=0)
    shift = np.array([center_r[0], center_r[1], 0.0])
    frames = []
    for f in motion.frames:
        q = f.q.copy()
        q[0:2] -= shift[0:2]
        frames.append(Frame(t=f.t, q=q, keyframe=f.keyframe, eye_state=f.eye_state))
    shifted = Motion(id=motion.id, mode=motion.mode, emotion=motion.emotion,
                     frames=frames, rate=motion.rate)
    eps = foot_points(model, frames[0].q)
    pin = {"toe_r": np.array([eps["right"][1, 0], eps["right"][1, 1], 0.0]),
           "heel_r": np.array([eps["right"][0, 0], eps["right"][0, 1], 0.0])}
    slots = _hull_slot_order(eps["left"], eps["right"])
    return shifted, pin, slots


def optimize_standing(model: RobotModel, motion: Motion,
                      config: StandingOptConfig | None = None,
                      verbose: bool = False):
    """Run the windowed standing optimization over a whole motion.

    Returns (optimized Motion, StandingReport).  Raises StandingOptError if
    any window fails, naming the window and its worst constraint block.
    """
    cfg = config or StandingOptConfig()
    if motion.mode != "standing":
        raise StandingOptError(f"motion {motion.id!r} is not a standing motion")
    motion, pin, slots = _normalize_standing_motion(model, motion)
    windows = segment_motion(motion, cfg.n_target)

    N = len(motion.frames)
    times = np.zeros(N)
    Q = np.zeros((N, 20))
    V = np.zeros((N, 20))
    A = np.zeros((N, 20))
    U = np.zeros((N, 10))
    LAM = np.zeros((N, 12))
    LAMS = np.zeros((N, 4))
    report_windows = []
    junctions = []

    prev_end = None
    t_base = 0.0
    for w, win in enumerate(windows):
        win.prev_end = prev_end
        wp = WindowProblem(model, win, cfg, pin, slots,
                           final=(w == len(windows) - 1))
        problem = wp.build()
        x0 = wp.warm_start()
        opts = cfg.nlp
        if verbose:
            opts = NlpOptions(**{**opts.__dict__, "verbose": 1})
            print(f"[standing] window {w}: nodes {win.k0}..{win.kt} "
                  f"(n={win.n}, nz={wp.nz})")
        S = wp.x_scale()
        sol = solve_nlp(scale_problem(problem, S), x0 / S, opts)
        sol.x = S * sol.x
        if sol.status == "failed":
            worst = max(wp.block_violations(sol.x).items(), key=lambda kv: kv[1])
            raise StandingOptError(
                f"window {w} (nodes {win.k0}..{win.kt}) failed to converge: "
                f"worst constraint {worst[0]!r} violation {worst[1]:.3e} "
                f"({sol.message})")
        s, Qw, Vw, Aw, Uw, Lw, Lsw = wp.split_full(sol.x)
        t_w = t_base + np.concatenate([[0.0], np.cumsum(s * wp.dt0)])
        if w > 0:
            junctions.append(float(np.abs(
                np.concatenate([Qw[0, 0:6] - prev_end[0],
                                Vw[0, 0:6] - prev_end[1]])).max()))
        sl = slice(win.k0, win.kt + 1)
        times[sl], Q[sl], V[sl], A[sl] = t_w, Qw, Vw, Aw
        U[sl], LAM[sl], LAMS[sl] = Uw, Lw, Lsw
        prev_end = (Qw[-1, 0:6].copy(), Vw[-1, 0:6].copy())
        t_base = t_w[-1]
        report_windows.append({
            "window": w, "k0": win.k0, "kt": win.kt, "n": win.n,
            "dilation": float(s), "status": sol.status,
            "iterations": sol.iterations, "max_violation": sol.max_violation,
            "stationarity": sol.stationarity, "objective": sol.objective,
            "t_ani_end": motion.frames[win.kt].t,
        })
        if verbose:
            print(f"[standing] window {w}: {sol.status} viol={sol.max_violation:.2e} "
                  f"s={s:.3f} iters={sol.iterations}")

    frames = [Frame(t=float(times[k]), q=Q[k].copy(),
                    keyframe=bool(motion.frames[k].keyframe),
                    eye_state=motion.frames[k].eye_state)
              for k in range(N)]
    out = Motion(id=f"{motion.id}.opt", mode="standing", emotion=motion.emotion,
                 frames=frames, rate=motion.rate)
    report = StandingReport(windows=report_windows, times=times, Q=Q, V=V, A=A,
                            U=U, LAM=LAM, LAMS=LAMS,
                            junction_residuals=junctions, hull_slots=slots)
    return out, report
