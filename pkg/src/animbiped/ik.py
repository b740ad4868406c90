"""Constrained inverse kinematics for the biped.

Maps a :class:`~animbiped.animio.TargetRig` to a full configuration that
minimizes the squared foot-target distance subject to joint bounds, a pinned
pelvis pose, pinned hip yaw angles, and the passive-spring constraints
q5 = 0 and q6 + q4 = 13 deg.

The pinned equalities fix 12 of the 20 DoF analytically; what remains is a
small bounded least-squares problem in (q1, q3, q4, q7) per leg, solved with
a damped Gauss-Newton iteration with projection onto the bounds.  The
objective is non-increasing across iterations by construction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .animio import TargetRig
from .model import layout
from .model.kinematics import _axis_rotation
from .model.spec import RobotModel

_FREE = {"left": (layout.Q1_L, layout.Q3_L, layout.Q4_L, layout.Q7_L),
         "right": (layout.Q1_R, layout.Q3_R, layout.Q4_R, layout.Q7_R)}
_YAW = {"left": layout.Q2_L, "right": layout.Q2_R}
_KNEE = {"left": layout.Q4_L, "right": layout.Q4_R}
_TARSUS = {"left": layout.Q6_L, "right": layout.Q6_R}
_SHIN = {"left": layout.Q5_L, "right": layout.Q5_R}


@dataclass
class IkOptions:
    max_iter: int = 60
    grad_tol: float = 1e-10
    step_tol: float = 1e-13
    damping: float = 1e-9


@dataclass
class IkResult:
    q: np.ndarray
    objective: float                       # m^2, summed over both feet
    constraint_residuals: dict[str, float]
    status: str                            # converged | max-iter | infeasible
    iterations: int = 0
    objective_history: list[float] = field(default_factory=list)
    message: str = ""


def _pelvis_rotation(rpy):
    r = _axis_rotation(np.array([1.0, 0, 0]), np.asarray(rpy[..., 0]))
    p = _axis_rotation(np.array([0, 1.0, 0]), np.asarray(rpy[..., 1]))
    y = _axis_rotation(np.array([0, 0, 1.0]), np.asarray(rpy[..., 2]))
    return y @ p @ r


class _LegChain:
    """Minimal FK for one leg from the pelvis frame (batched, complex-safe)."""

    def __init__(self, model: RobotModel, side: str):
        bodies = []
        b = model.foot_body[side]
        while model.body_names[b] != "pelvis":
            bodies.append(b)
            b = model.parent[b]
        self.bodies = bodies[::-1]
        self.model = model
        self.foot_center_local = model.feet[side].endpoints.mean(axis=0)

    def foot_center(self, R0, p0, q):
        """World foot center; R0,p0 pelvis pose; q (..., 20)."""
        m = self.model
        R, p = R0, p0
        for b in self.bodies:
            Rj = R @ m.X_rot[b]
            pj = p + np.einsum("...ij,j->...i", R, m.X_trans[b])
            R = Rj @ _axis_rotation(m.axes[b], q[..., m.q_index[b]])
            p = pj
        return p + np.einsum("...ij,j->...i", R, self.foot_center_local)


def rig_from_config(model: RobotModel, q: np.ndarray) -> TargetRig:
    """Build the rig whose exact solution is the given configuration."""
    from .model.kinematics import body_frames, body_points
    q = layout.check_q(q)
    R, p = body_frames(model, q)
    foot_targets = {}
    for side in ("left", "right"):
        eps = body_points(R, p, model.foot_body[side], model.feet[side].endpoints)
        foot_targets[side] = eps.mean(axis=-2)
    return TargetRig(pelvis_pose=q[layout.PELVIS].copy(),
                     foot_targets=foot_targets,
                     leg_yaw_targets={s: float(q[_YAW[s]]) for s in ("left", "right")})


def solve_ik(model: RobotModel, rig: TargetRig, q_init: np.ndarray,
             options: IkOptions | None = None) -> IkResult:
    """Solve the constrained IK problem for one rig.

    Deterministic in (rig, q_init, options).  Unreachable foot targets
    converge to the boundary of the reachable set (objective > 0) rather
    than raising.
    """
    opts = options or IkOptions()
    q_init = layout.check_q(q_init).copy()
    q = q_init.copy()

    # ---- eliminated equality constraints ------------------------------
    q[layout.PELVIS] = rig.pelvis_pose
    for side in ("left", "right"):
        q[_YAW[side]] = rig.leg_yaw_targets[side]
        q[_SHIN[side]] = 0.0

    violations = {}
    for idx in range(6):
        v = _bound_violation(q[idx], model.q_min[idx], model.q_max[idx])
        if v > 0:
            violations[f"pelvis[{idx}]"] = v
    for side in ("left", "right"):
        v = _bound_violation(q[_YAW[side]], model.q_min[_YAW[side]],
                             model.q_max[_YAW[side]])
        if v > 0:
            violations[f"hip_yaw_{side}"] = v
    # q6 = 13deg - q4 restricts the usable knee range
    knee_bounds = {}
    for side in ("left", "right"):
        i4, i6 = _KNEE[side], _TARSUS[side]
        lo = max(model.q_min[i4], layout.TARSUS_COUPLING - model.q_max[i6])
        hi = min(model.q_max[i4], layout.TARSUS_COUPLING - model.q_min[i6])
        if lo >= hi:
            violations[f"knee_tarsus_range_{side}"] = lo - hi
        knee_bounds[side] = (lo, hi)
    if violations:
        worst = max(violations.items(), key=lambda kv: kv[1])
        return IkResult(q=q, objective=np.inf, constraint_residuals=violations,
                        status="infeasible",
                        message=f"pinned target violates bounds: "
                                f"{worst[0]} by {worst[1]:.3g}")

    R0 = _pelvis_rotation(rig.pelvis_pose[3:6])
    p0 = rig.pelvis_pose[0:3]

    objective = 0.0
    history_total = None
    iters = 0
    status = "converged"
    for side in ("left", "right"):
        idx = np.array(_FREE[side])
        lo = model.q_min[idx].copy()
        hi = model.q_max[idx].copy()
        lo[2], hi[2] = knee_bounds[side]
        x0 = np.clip(q_init[idx], lo, hi)
        chain = _LegChain(model, side)
        target = rig.foot_targets[side]

        def residual(x, q=q, idx=idx, chain=chain, target=target):
            qc = np.broadcast_to(q, x.shape[:-1] + (layout.NQ,)).astype(x.dtype).copy()
            qc[..., idx] = x
            i4, i6 = _KNEE[side], _TARSUS[side]
            qc[..., i6] = layout.TARSUS_COUPLING - qc[..., i4]
            return chain.foot_center(R0, p0, qc) - target

        x, f_hist, n_it, ok = _bounded_gauss_newton(residual, x0, lo, hi, opts)
        q[idx] = x
        q[_TARSUS[side]] = layout.TARSUS_COUPLING - q[_KNEE[side]]
        objective += f_hist[-1]
        iters += n_it
        if not ok:
            status = "max-iter"
        if history_total is None:
            history_total = list(f_hist)
        else:
            # align the two legs' histories by padding with final values
            n = max(len(history_total), len(f_hist))
            a = history_total + [history_total[-1]] * (n - len(history_total))
            b = list(f_hist) + [f_hist[-1]] * (n - len(f_hist))
            history_total = [ai + bi for ai, bi in zip(a, b)]

    residuals = {
        "pelvis_pose": float(np.abs(q[layout.PELVIS] - rig.pelvis_pose).max()),
        "hip_yaw": max(abs(q[_YAW[s]] - rig.leg_yaw_targets[s])
                       for s in ("left", "right")),
        "shin_spring": max(abs(float(q[_SHIN[s]])) for s in ("left", "right")),
        "tarsus_coupling": max(
            abs(float(q[_TARSUS[s]] + q[_KNEE[s]] - layout.TARSUS_COUPLING))
            for s in ("left", "right")),
        "bounds": float(np.maximum(q - model.q_max,
                                   np.maximum(model.q_min - q, 0.0)).max()),
    }
    return IkResult(q=q, objective=float(objective),
                    constraint_residuals=residuals, status=status,
                    iterations=iters, objective_history=history_total)


def _bound_violation(v, lo, hi) -> float:
    return float(max(lo - v, v - hi, 0.0))


def _bounded_gauss_newton(residual, x0, lo, hi, opts: IkOptions):
    """Damped Gauss-Newton with projection onto box bounds.

    Returns (x, objective_history, iterations, converged).  The objective
    history is monotone non-increasing: steps are only accepted on decrease.
    """
    n = x0.size
    x = x0.copy()
    step = 1e-20

    def eval_r_J(x):
        xs = np.broadcast_to(x, (n + 1, n)).astype(complex).copy()
        xs[1:] += 1j * step * np.eye(n)
        r = residual(xs)
        return r[0].real, r[1:].imag.T / step   # r (3,), J (3,n)

    r, J = eval_r_J(x)
    f = float(r @ r)
    history = [f]
    lam = opts.damping
    converged = False
    it = 0
    for it in range(1, opts.max_iter + 1):
        g = 2.0 * J.T @ r
        pg = x - np.clip(x - g, lo, hi)
        if np.abs(pg).max() < opts.grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(25):
            H = J.T @ J + lam * np.eye(n)
            d = np.linalg.solve(H, -J.T @ r)
            alpha = 1.0
            for _ in range(12):
                x_new = np.clip(x + alpha * d, lo, hi)
                r_new = residual(x_new.astype(complex)[None])[0].real
                f_new = float(r_new @ r_new)
                if f_new < f - 1e-16:
                    break
                alpha *= 0.5
            else:
                lam = max(lam * 10.0, 1e-8)
                continue
            if np.abs(x_new - x).max() < opts.step_tol:
                x = x_new
                f = f_new
                history.append(f)
                converged = True
                accepted = True
                break
            x, f = x_new, f_new
            r, J = eval_r_J(x)
            history.append(f)
            lam = max(lam * 0.25, opts.damping)
            accepted = True
            break
        if converged or not accepted:
            if not accepted:
                converged = True   # no descent direction: at a local optimum
            break
    return x, history, it, converged
