"""Generic smooth constrained optimization.

An augmented-Lagrangian method with a bound-constrained projected-Newton
inner loop and a damped (Armijo) line search.  Inequality blocks are folded
into equalities with bounded slacks; each inner Newton step solves one sparse
saddle system, so large collocation problems stay tractable without ever
forming J^T J densely.

Deterministic: identical problems, starts and options yield identical
iterates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class CallbackError(RuntimeError):
    """A user callback raised or returned non-finite values."""


@dataclass
class ConstraintBlock:
    """One block of constraints: fun(x) = 0 (eq) or fun(x) >= 0 (ineq).

    ``jac`` may return a dense array or any scipy.sparse matrix; sparse
    returns are the supported way to convey sparsity structure.  ``fun_batch``
    optionally evaluates a whole batch of points (B, n) -> (B, dim); the
    finite-difference audit uses it when present.
    """
    name: str
    dim: int
    fun: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray | sp.spmatrix]
    kind: str = "eq"            # "eq" | "ineq"
    fun_batch: Callable[[np.ndarray], np.ndarray] | None = None
    weight: float = 1.0         # row weight: the solver treats the block's
                                # effective tolerance as tol_feas / weight

    def __post_init__(self):
        if self.kind not in ("eq", "ineq"):
            raise ValueError(f"constraint block {self.name!r}: bad kind {self.kind!r}")


@dataclass
class NlpProblem:
    n: int
    lb: np.ndarray
    ub: np.ndarray
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    blocks: list[ConstraintBlock] = field(default_factory=list)
    hess_diag: Callable[[np.ndarray], np.ndarray] | None = None
    objective_batch: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "nlp"

    def __post_init__(self):
        self.lb = np.asarray(self.lb, dtype=float)
        self.ub = np.asarray(self.ub, dtype=float)
        if self.lb.shape != (self.n,) or self.ub.shape != (self.n,):
            raise ValueError("bounds must have shape (n,)")
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub")

    @property
    def m_eq(self) -> int:
        return sum(b.dim for b in self.blocks if b.kind == "eq")

    @property
    def m_ineq(self) -> int:
        return sum(b.dim for b in self.blocks if b.kind == "ineq")


@dataclass
class NlpOptions:
    tol_feas: float = 1e-8
    tol_stat: float = 1e-6
    max_outer: int = 30
    max_inner: int = 80
    mu0: float = 10.0
    mu_factor: float = 10.0
    mu_max: float = 1e10
    omega0: float = 1e-2        # initial inner (stationarity) tolerance
    eta0: float = 1e-2          # initial feasibility gate for multiplier updates
    armijo: float = 1e-4
    init_multipliers: str = "zeros"    # "zeros" | "lsq"
    verbose: int = 0


@dataclass
class NlpSolution:
    x: np.ndarray
    objective: float
    status: str                  # optimal | feasible-suboptimal | failed
    max_violation: float         # unweighted, across all blocks
    stationarity: float
    iterations: int
    multipliers: dict[str, np.ndarray] = field(default_factory=dict)
    block_violations: dict[str, float] = field(default_factory=dict)
    message: str = ""


def _check_finite(v, what):
    if not np.all(np.isfinite(v)):
        raise CallbackError(f"{what} returned non-finite values")
    return v


class _Evaluator:
    """Caches stacked constraint values/Jacobians in the slack formulation."""

    def __init__(self, problem: NlpProblem):
        self.p = problem
        self.n = problem.n
        self.blocks = problem.blocks
        self.m = sum(b.dim for b in self.blocks)
        self.n_slack = problem.m_ineq
        self.nz = self.n + self.n_slack
        lb = np.concatenate([problem.lb, np.zeros(self.n_slack)])
        ub = np.concatenate([problem.ub, np.full(self.n_slack, np.inf)])
        self.lb, self.ub = lb, ub
        # row/slack offsets per block
        self.row0 = {}
        self.slack0 = {}
        r, s = 0, 0
        for b in self.blocks:
            self.row0[b.name] = r
            if b.kind == "ineq":
                self.slack0[b.name] = s
                s += b.dim
            r += b.dim

    def split(self, z):
        return z[:self.n], z[self.n:]

    def f(self, z):
        return float(_check_finite(self.p.objective(z[:self.n]), "objective"))

    def grad(self, z):
        g = np.zeros(self.nz)
        g[:self.n] = _check_finite(self.p.gradient(z[:self.n]), "gradient")
        return g

    def hess_diag(self, z):
        h = np.zeros(self.nz)
        if self.p.hess_diag is not None:
            h[:self.n] = _check_finite(self.p.hess_diag(z[:self.n]), "hess_diag")
        return h

    def c(self, z):
        x, s = self.split(z)
        out = np.empty(self.m)
        for b in self.blocks:
            v = np.atleast_1d(_check_finite(b.fun(x), f"constraint {b.name!r}"))
            if v.shape != (b.dim,):
                raise CallbackError(f"constraint {b.name!r} returned shape "
                                    f"{v.shape}, declared dim {b.dim}")
            r = self.row0[b.name]
            if b.kind == "ineq":
                v = v - s[self.slack0[b.name]:self.slack0[b.name] + b.dim]
            out[r:r + b.dim] = b.weight * v
        return out

    def jac(self, z):
        x, _ = self.split(z)
        rows = []
        for b in self.blocks:
            J = b.jac(x)
            J = sp.csr_matrix(J) if not sp.issparse(J) else J.tocsr()
            if J.shape != (b.dim, self.n):
                raise CallbackError(f"constraint {b.name!r} jacobian shape "
                                    f"{J.shape} != {(b.dim, self.n)}")
            _check_finite(J.data if J.nnz else np.zeros(1),
                          f"jacobian {b.name!r}")
            if self.n_slack:
                Js = sp.lil_matrix((b.dim, self.n_slack))
                if b.kind == "ineq":
                    s0 = self.slack0[b.name]
                    Js[np.arange(b.dim), s0 + np.arange(b.dim)] = -1.0
                J = sp.hstack([J, Js.tocsr()], format="csr")
            rows.append(b.weight * J if b.weight != 1.0 else J)
        return sp.vstack(rows, format="csr") if rows else \
            sp.csr_matrix((0, self.nz))

    def init_slacks(self, x):
        s = np.zeros(self.n_slack)
        for b in self.blocks:
            if b.kind == "ineq":
                v = np.atleast_1d(b.fun(x))
                s0 = self.slack0[b.name]
                s[s0:s0 + b.dim] = np.maximum(v, 0.0)
        return s

    def unstack_multipliers(self, y):
        return {b.name: y[self.row0[b.name]:self.row0[b.name] + b.dim]
                for b in self.blocks}


def _projected_grad_norm(z, g, lb, ub):
    return float(np.abs(z - np.clip(z - g, lb, ub)).max(initial=0.0))


def solve_nlp(problem: NlpProblem, x0: np.ndarray,
              options: NlpOptions | None = None) -> NlpSolution:
    """Minimize the problem from x0.

    Never reports ``optimal`` with violated constraints: the status encodes
    the final feasibility (1e-6) and stationarity (1e-4) checks.
    """
    opts = options or NlpOptions()
    ev = _Evaluator(problem)
    try:
        return _solve(ev, np.asarray(x0, dtype=float), opts)
    except CallbackError as e:
        x = np.clip(np.asarray(x0, dtype=float), problem.lb, problem.ub)
        return NlpSolution(x=x, objective=np.nan, status="failed",
                           max_violation=np.inf, stationarity=np.inf,
                           iterations=0, message=str(e))


def _solve(ev: _Evaluator, x0: np.ndarray, opts: NlpOptions) -> NlpSolution:
    lb, ub = ev.lb, ev.ub
    z = np.concatenate([np.clip(x0, lb[:ev.n], ub[:ev.n]), ev.init_slacks(x0)])
    m = ev.m
    y = np.zeros(m)
    if opts.init_multipliers == "lsq" and m:
        # least-squares stationarity fit: min ||grad f - J^T y||
        J = ev.jac(z)
        g = ev.grad(z)
        A = (J @ J.T + 1e-8 * sp.eye(m)).tocsc()
        y = spla.splu(A).solve(J @ g)
        y = np.nan_to_num(y)
    mu = opts.mu0
    omega = opts.omega0
    total_inner = 0

    c = ev.c(z)
    viol = np.abs(c).max(initial=0.0)
    prev_viol = np.inf
    stalled = 0
    best = (np.inf, None, None)

    for outer in range(opts.max_outer):
        z, c, n_inner = _inner_minimize(ev, z, y, mu, max(omega, opts.tol_stat / 2),
                                        opts)
        total_inner += n_inner
        viol = np.abs(c).max(initial=0.0)

        y_trial = y - mu * c
        g_lag = ev.grad(z) - ev.jac(z).T @ y_trial
        stat = _projected_grad_norm(z, g_lag, lb, ub)
        if opts.verbose:
            print(f"[al] outer {outer}: viol={viol:.3e} stat={stat:.3e} "
                  f"mu={mu:.1e} inner={n_inner}")
        if viol < best[0]:
            best = (viol, z.copy(), y_trial.copy())
        if viol <= opts.tol_feas and stat <= opts.tol_stat:
            y = y_trial
            break
        # safeguarded first-order multiplier update every round; raise the
        # penalty only when feasibility stops improving enough
        y = np.clip(y_trial, -1e12, 1e12)
        if viol > 0.5 * prev_viol and viol > opts.tol_feas:
            mu = min(mu * opts.mu_factor, opts.mu_max)
        omega = max(0.2 * omega, 0.1 * opts.tol_stat)
        stalled = stalled + 1 if viol > 0.9 * prev_viol else 0
        prev_viol = viol
        if stalled >= 3 and viol <= opts.tol_feas:
            break   # feasible and no further progress: accept
        if stalled >= 4:
            break   # no feasibility progress across several outer rounds
    else:
        outer = opts.max_outer

    # feasibility polish from the best iterate seen
    if best[1] is not None and best[0] < viol:
        z, y = best[1], best[2]
        viol = best[0]
    if opts.tol_feas < viol:
        z, c = _feasibility_polish(ev, z, opts)
        viol = np.abs(c).max(initial=0.0)
        if m:
            J = ev.jac(z)
            A = (J @ J.T + 1e-10 * sp.eye(m)).tocsc()
            try:
                y = spla.splu(A).solve(J @ ev.grad(z))
            except RuntimeError:
                pass

    return _finish(ev, z, y, total_inner, opts)


def _finish(ev: _Evaluator, z, y, total_inner, opts) -> NlpSolution:
    x = z[:ev.n]
    f = ev.f(z)
    y_final = y if isinstance(y, np.ndarray) else np.zeros(ev.m)
    g_lag = ev.grad(z) - ev.jac(z).T @ y_final
    stat = _projected_grad_norm(z, g_lag, ev.lb, ev.ub)

    # per-block unweighted violations; a block is satisfied within its own
    # effective tolerance tol_feas / weight
    block_viol = {}
    within_tol = True
    for b in ev.blocks:
        v = np.atleast_1d(b.fun(x))
        if b.kind == "ineq":
            bv = float(np.maximum(-v, 0.0).max(initial=0.0))
        else:
            bv = float(np.abs(v).max(initial=0.0))
        block_viol[b.name] = bv
        if bv > opts.tol_feas / b.weight:
            within_tol = False
    viol = max(block_viol.values(), default=0.0)

    if viol < 1e-6 and stat < 1e-4:
        status = "optimal"
        msg = "converged"
    elif within_tol:
        status = "feasible-suboptimal"
        msg = (f"feasible within per-block tolerances "
               f"(max violation {viol:.2e}, stationarity {stat:.2e})")
    else:
        status = "failed"
        worst = max(block_viol, key=lambda k: block_viol[k])
        msg = f"constraint block {worst!r} violation {block_viol[worst]:.2e}"
    return NlpSolution(x=x, objective=f, status=status, max_violation=viol,
                       stationarity=stat, iterations=total_inner,
                       multipliers=ev.unstack_multipliers(y_final),
                       block_violations=block_viol, message=msg)


def _feasibility_polish(ev: _Evaluator, z, opts: NlpOptions, max_iter: int = 80):
    """Drive ||c||_inf to tolerance with Levenberg-Marquardt inside the bounds.

    Feasibility is a zero-residual least-squares problem, so LM converges
    superlinearly once in the basin; the adaptive damping keeps steps inside
    the region where the constraint linearization is trustworthy, which a
    fixed-damping Gauss-Newton step does not.
    """
    lb, ub = ev.lb, ev.ub
    c = ev.c(z)
    val = 0.5 * float(c @ c)
    lam = 1e-4
    J = None
    fresh = False
    for _ in range(max_iter):
        if np.abs(c).max(initial=0.0) <= opts.tol_feas:
            break
        if not fresh:
            J = ev.jac(z).tocsc()
            JtJ = (J.T @ J).tocsc()
            diag = JtJ.diagonal() + 1e-8
            g = J.T @ c
            fresh = True
        try:
            H = (JtJ + sp.diags(lam * diag)).tocsc()
            d = spla.splu(H).solve(-g)
        except RuntimeError:
            lam = min(lam * 10, 1e12)
            continue
        if not np.all(np.isfinite(d)):
            lam = min(lam * 10, 1e12)
            continue
        z_new = np.clip(z + d, lb, ub)
        try:
            c_new = ev.c(z_new)
        except CallbackError:
            lam = min(lam * 10, 1e12)
            continue
        val_new = 0.5 * float(c_new @ c_new)
        pred = -float(g @ (z_new - z)) - 0.5 * float((J @ (z_new - z)) @ (J @ (z_new - z)))
        pred = max(-float(g @ (z_new - z)) * 0.5, 1e-300)   # conservative model decrease
        rho = (val - val_new) / pred
        if val_new < val and np.isfinite(val_new):
            z, c, val = z_new, c_new, val_new
            fresh = False
            lam = max(lam / 3.0 if rho > 0.5 else lam, 1e-12)
        else:
            lam = min(lam * 4.0, 1e12)
            if lam >= 1e12:
                break
    return z, c


def _inner_minimize(ev: _Evaluator, z, y, mu, omega, opts: NlpOptions):
    """Minimize the augmented Lagrangian over the bound box from z.

    Gauss-Newton model: H = diag(hess_diag) + mu J^T J with a relative
    Levenberg damping; the damping is sticky across iterations so repeated
    factorizations for rejected steps stay rare.
    """
    lb, ub = ev.lb, ev.ub
    nz = ev.nz

    def phi(z_, c_=None):
        c_ = ev.c(z_) if c_ is None else c_
        return ev.f(z_) - y @ c_ + 0.5 * mu * (c_ @ c_), c_

    c = ev.c(z)
    val, _ = phi(z, c)
    tau_rel = 1e-8
    it = 0
    J = None
    z_at_jac = None
    tiny_steps = 0
    for it in range(1, opts.max_inner + 1):
        # refresh the Jacobian only after real movement; churn steps reuse it
        if J is None or np.abs(z - z_at_jac).max() > 1e-9 * (1 + np.abs(z).max()):
            J = ev.jac(z)
            z_at_jac = z.copy()
        g = ev.grad(z) - J.T @ (y - mu * c)
        if _projected_grad_norm(z, g, lb, ub) <= omega:
            break

        # active bounds (gradient pushing outward) stay fixed this iteration
        eps = 1e-12 + 1e-9 * np.maximum(np.abs(z), 1.0)
        active = ((z <= lb + eps) & (g > 0)) | ((z >= ub - eps) & (g < 0))
        free = ~active
        nf = int(free.sum())
        if nf == 0:
            break

        h0 = ev.hess_diag(z)[free]
        Jf = J[:, free].tocsc()
        JtJ = (Jf.T @ Jf).tocsc()
        diag_scale = h0 + mu * JtJ.diagonal() + 1.0

        step = None
        for _ in range(16):
            H = (sp.diags(h0 + tau_rel * diag_scale) + mu * JtJ).tocsc()
            try:
                lu = spla.splu(H)
                d_f = lu.solve(-g[free])
            except RuntimeError:
                tau_rel = min(tau_rel * 10, 1e6)
                continue
            if not np.all(np.isfinite(d_f)) or g[free] @ d_f >= 0:
                tau_rel = min(tau_rel * 10, 1e6)
                continue
            d = np.zeros(nz)
            d[free] = d_f

            def try_point(z_new):
                try:
                    val_new, c_new = phi(z_new)
                except CallbackError:
                    return None
                dec = g @ (z_new - z)
                if val_new <= val + opts.armijo * min(dec, 0.0) \
                        and val_new < val - 1e-12 * abs(val) - 1e-15:
                    return (z_new, val_new, c_new)
                return None

            # full step, then a second-order correction that cancels the
            # constraint curvature picked up along d (reuses the factorization)
            z_full = np.clip(z + d, lb, ub)
            step = try_point(z_full)
            if step is None:
                try:
                    c_full = ev.c(z_full)
                    d_soc = np.zeros(nz)
                    d_soc[free] = lu.solve(-mu * (Jf.T @ (c_full - c - Jf @ d_f)))
                    step = try_point(np.clip(z + d + d_soc, lb, ub))
                except CallbackError:
                    step = None
            if step is None:
                alpha = 0.5
                for _ in range(24):
                    step = try_point(np.clip(z + alpha * d, lb, ub))
                    if step is not None or alpha < 1e-8:
                        break
                    alpha *= 0.5
            if step is not None:
                break
            tau_rel = min(tau_rel * 10, 1e6)
        if step is None:
            break   # cannot decrease further at this penalty level
        step_norm = float(np.abs(step[0] - z).max(initial=0.0))
        improvement = val - step[1]
        z, val, c = step
        tau_rel = max(tau_rel * 0.3, 1e-10)
        if step_norm < 1e-12 * (1.0 + np.abs(z).max()):
            break   # iterates have stopped moving
        tiny_steps = tiny_steps + 1 \
            if improvement < 1e-9 * max(1.0, abs(val)) else 0
        if tiny_steps >= 3:
            break   # objective plateau: further churn buys nothing
    return z, c, it


# ---------------------------------------------------------------------------
# variable scaling

def scale_problem(problem: NlpProblem, x_scale) -> NlpProblem:
    """Equivalent problem in scaled variables xt = x / x_scale.

    Row values (and therefore violation tolerances) are untouched; only the
    variable geometry changes, which is what the damped Newton steps see.
    Solve with x0 / x_scale and multiply the solution by x_scale.
    """
    S = np.asarray(x_scale, dtype=float)
    if S.shape != (problem.n,) or np.any(S <= 0):
        raise ValueError("x_scale must be positive with shape (n,)")

    def col_scaled(Jv):
        if sp.issparse(Jv):
            return Jv @ sp.diags(S)
        return np.asarray(Jv) * S

    blocks = []
    for b in problem.blocks:
        def fun(xt, _f=b.fun):
            return _f(S * xt)
        def jac(xt, _j=b.jac):
            return col_scaled(_j(S * xt))
        fb = None
        if b.fun_batch is not None:
            def fb(xt, _f=b.fun_batch):
                return _f(S * xt)
        blocks.append(ConstraintBlock(b.name, b.dim, fun, jac, b.kind, fb,
                                      weight=b.weight))

    ob = problem.objective_batch
    return NlpProblem(
        n=problem.n, lb=problem.lb / S, ub=problem.ub / S,
        objective=lambda xt: problem.objective(S * xt),
        gradient=lambda xt: S * np.asarray(problem.gradient(S * xt)),
        blocks=blocks,
        hess_diag=(None if problem.hess_diag is None
                   else lambda xt: S * S * np.asarray(problem.hess_diag(S * xt))),
        objective_batch=(None if ob is None else (lambda xt: ob(S * xt))),
        name=problem.name + ".scaled")


# ---------------------------------------------------------------------------
# finite-difference audit

def audit_gradients(problem: NlpProblem, points, step: float = 1e-6,
                    chunk: int = 512):
    """Max relative error of gradient/Jacobian callbacks vs central differences.

    ``points`` is an iterable of interior points.  Returns a dict
    {callback name: max relative error}.  Blocks exposing ``fun_batch`` are
    probed with vectorized perturbation batches.
    """
    n = problem.n
    errs = {"objective": 0.0}
    for b in problem.blocks:
        errs[b.name] = 0.0

    def fd_columns(fun_batch, fun, x, dim):
        """Central-difference Jacobian (dim, n) of one callback."""
        if fun_batch is not None:
            X = np.repeat(x[None, :], 2 * n, axis=0)
            X[:n, :] += step * np.eye(n)
            X[n:, :] -= step * np.eye(n)
            vals = np.concatenate([np.atleast_2d(fun_batch(X[i:i + chunk]))
                                   for i in range(0, 2 * n, chunk)])
            return (vals[:n] - vals[n:]).T / (2 * step)
        fd = np.empty((dim, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            fd[:, k] = (np.atleast_1d(fun(x + e))
                        - np.atleast_1d(fun(x - e))) / (2 * step)
        return fd

    for x in points:
        x = np.asarray(x, dtype=float)
        g = np.asarray(problem.gradient(x))
        ob = problem.objective_batch
        fd_g = fd_columns(
            (lambda X: np.asarray(ob(X))[:, None]) if ob is not None else None,
            lambda xx: np.array([problem.objective(xx)]), x, 1)[0]
        scale = max(1.0, np.abs(fd_g).max())
        errs["objective"] = max(errs["objective"], np.abs(g - fd_g).max() / scale)
        for b in problem.blocks:
            J = b.jac(x)
            J = J.toarray() if sp.issparse(J) else np.asarray(J)
            fd = fd_columns(b.fun_batch, b.fun, x, b.dim)
            scale = max(1.0, np.abs(fd).max())
            errs[b.name] = max(errs[b.name], np.abs(J - fd).max() / scale)
    return errs
