"""Trajectory optimization by penalty-method Gauss-Newton.

Repairs discontinuity-bounded trajectories into dynamically feasible,
collision-free motions and solves two-point boundary value problems for
primitive generation.  The decision variables are the stacked states
``Q[1..T]`` and actions ``U[0..T-1]`` (``Q[0]`` is pinned to the start);
the objective is a weighted sum of squared residuals:

- dynamics defects      ``Q[t+1] - step(Q[t], U[t])`` (angle-aware)
- goal mismatch         ``Q[T] - q_g``
- action regularization ``U``
- obstacle clearance hinges on a circumscribed-circle footprint bound

Penalty weights are escalated (x10, up to 5 rounds) until the iterate is
feasible.  Within each round a backtracking line search keeps the
objective non-increasing.  Bounds are enforced by clamping every iterate.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import world as world_mod
from .dynamics import RobotModel, jacobians, rollout, step, wrap_angle
from .world import ProblemInstance


class NumericalError(RuntimeError):
    """Objective or step became non-finite."""


@dataclass
class OptWeights:
    w_defect: float = 10.0
    w_obs: float = 10.0
    w_goal: float = 10.0
    w_reg: float = 1e-2

    def __post_init__(self):
        if min(self.w_defect, self.w_obs, self.w_goal, self.w_reg) <= 0:
            raise ValueError("all weights must be positive")


@dataclass
class OptTolerances:
    defect: float = 1e-4
    goal: float = 1e-3
    obs_margin: float = 0.0


@dataclass
class OptProblem:
    """One fixed-horizon trajectory optimization problem."""

    model: RobotModel
    q_s: np.ndarray
    q_g: np.ndarray
    horizon: int
    inst: ProblemInstance | None = None  # None: obstacle-free, unbounded workspace
    weights: OptWeights = field(default_factory=OptWeights)
    tolerances: OptTolerances = field(default_factory=OptTolerances)
    guess_Q: np.ndarray | None = None
    guess_U: np.ndarray | None = None
    max_gn_iters: int = 50
    penalty_rounds: int = 5
    penalty_factor: float = 10.0

    def __post_init__(self):
        self.q_s = np.asarray(self.q_s, dtype=float)
        self.q_g = np.asarray(self.q_g, dtype=float)
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.guess_Q is not None:
            self.guess_Q = np.asarray(self.guess_Q, dtype=float)
            if self.guess_Q.shape != (self.horizon + 1, self.model.d_q):
                raise ValueError("guess_Q shape does not match the horizon")
        if self.guess_U is not None:
            self.guess_U = np.asarray(self.guess_U, dtype=float)
            if self.guess_U.shape != (self.horizon, self.model.d_u):
                raise ValueError("guess_U shape does not match the horizon")


@dataclass
class OptResult:
    Q: np.ndarray
    U: np.ndarray
    feasible: bool
    cost: float
    max_defect: float = np.inf
    goal_err: float = np.inf
    objective_history: list = field(default_factory=list)


def angle_diff(model: RobotModel, qa, qb) -> np.ndarray:
    """Componentwise qa - qb with angle components wrapped; broadcasts."""
    d = np.asarray(qa, dtype=float) - np.asarray(qb, dtype=float)
    if model.angle_indices:
        idx = list(model.angle_indices)
        d[..., idx] = wrap_angle(d[..., idx])
    return d


def defects(model: RobotModel, Q, U) -> np.ndarray:
    """Stacked dynamics residuals Q[t+1] - step(Q[t], U[t]), shape (T * d_q,)."""
    Q = np.asarray(Q, dtype=float)
    U = np.asarray(U, dtype=float)
    if len(Q) != len(U) + 1:
        raise ValueError("need len(Q) == len(U) + 1")
    pred = step(model, Q[:-1], U)
    return angle_diff(model, Q[1:], pred).ravel()


def straight_line_guess(model: RobotModel, q_s, q_g, T: int):
    """Linear interpolation guess (wrap-aware on angles), zero actions."""
    q_s = np.asarray(q_s, dtype=float)
    q_g = np.asarray(q_g, dtype=float)
    w = np.linspace(0.0, 1.0, T + 1)[:, None]
    Q = q_s[None, :] + w * angle_diff(model, q_g, q_s)[None, :]
    if model.angle_indices:
        idx = list(model.angle_indices)
        Q[:, idx] = wrap_angle(Q[:, idx])
    return Q, np.zeros((T, model.d_u))


def _point_rect_distance(p: np.ndarray, rects: np.ndarray):
    """Signed distance (and gradient) from points to axis-aligned rectangles.

    p: (n, 2), rects: (m, 4) -> d: (n, m), grad: (n, m, 2).  Positive
    outside, negative inside.  At interior axis ties the subgradient is 0.
    """
    dx = p[:, None, 0] - rects[None, :, 0]
    dy = p[:, None, 1] - rects[None, :, 1]
    qx = np.abs(dx) - rects[None, :, 2]
    qy = np.abs(dy) - rects[None, :, 3]
    outside = (qx > 0) | (qy > 0)
    ox = np.maximum(qx, 0.0)
    oy = np.maximum(qy, 0.0)
    d_out = np.hypot(ox, oy)
    d_in = np.maximum(qx, qy)
    d = np.where(outside, d_out, d_in)
    gx = np.zeros_like(d)
    gy = np.zeros_like(d)
    safe = d_out > 0
    gx[safe] = (np.sign(dx) * ox)[safe] / d_out[safe]
    gy[safe] = (np.sign(dy) * oy)[safe] / d_out[safe]
    inside = ~outside
    tie = inside & (qx == qy)
    gx[inside & (qx > qy)] = np.sign(dx)[inside & (qx > qy)]
    gy[inside & (qy > qx)] = np.sign(dy)[inside & (qy > qx)]
    gx[tie] = 0.0
    gy[tie] = 0.0
    return d, np.stack([gx, gy], axis=-1)


class _Transcription:
    """Residual/Jacobian assembly for one OptProblem at given penalty weights."""

    def __init__(self, prob: OptProblem, weights: OptWeights):
        self.prob = prob
        self.w = weights
        m = prob.model
        T = prob.horizon
        self.nq = T * m.d_q          # Q[1..T]
        self.nu = T * m.d_u
        self.nvar = self.nq + self.nu
        # clamping bounds per variable (angles left unclamped, wrapped on output)
        q_lo, q_hi = m.q_lo.copy(), m.q_hi.copy()
        for i in m.angle_indices:
            q_lo[i], q_hi[i] = -np.inf, np.inf
        self.z_lo = np.concatenate([np.tile(q_lo, T), np.tile(m.u_lo, T)])
        self.z_hi = np.concatenate([np.tile(q_hi, T), np.tile(m.u_hi, T)])

    def pack(self, Q, U) -> np.ndarray:
        return np.concatenate([np.asarray(Q)[1:].ravel(), np.asarray(U).ravel()])

    def unpack(self, z: np.ndarray):
        m, T = self.prob.model, self.prob.horizon
        Q = np.vstack([self.prob.q_s[None, :], z[: self.nq].reshape(T, m.d_q)])
        U = z[self.nq:].reshape(T, m.d_u)
        return Q, U

    def clamp(self, z: np.ndarray) -> np.ndarray:
        return np.clip(z, self.z_lo, self.z_hi)

    # -- residual blocks -----------------------------------------------------

    def _obstacle_terms(self, Q, with_jac: bool):
        """Hinge residuals for obstacle clearance and workspace containment.

        States t >= 1 only (Q[0] is fixed).  Returns (values, rows-as-triplets)
        where triplets are (data, row, col) arrays for the sparse Jacobian.
        """
        prob, w = self.prob, np.sqrt(self.w.w_obs)
        inst = prob.inst
        if inst is None:
            return np.zeros(0), (np.zeros(0), np.zeros(0, int), np.zeros(0, int))
        m = prob.model
        T = prob.horizon
        Qv = Q[1:]
        tx, ty = m.translation_indices
        margin = prob.tolerances.obs_margin
        vals_all, data_all, rows_all, cols_all = [], [], [], []
        row_base = 0
        for body in inst.footprint:
            pos, th = world_mod._body_poses(inst, Qv, body)
            r = body.circumradius + margin
            has_angle = body.angle_index is not None and body.offset != 0.0
            if has_angle:
                dc_dth = body.offset * np.stack([np.sin(th), -np.cos(th)], axis=-1)
            # obstacle hinges
            if len(inst.obstacles):
                d, g = _point_rect_distance(pos, inst.obstacles)
                h = np.maximum(0.0, r - d)           # (T, m_obs)
                act_t, act_o = np.nonzero(h > 0)
                vals = w * h[act_t, act_o]
                if len(act_t):
                    vals_all.append(vals)
                    if with_jac:
                        gg = -w * g[act_t, act_o]    # d hinge / d center
                        rows = row_base + np.arange(len(act_t))
                        for k, col_idx in enumerate((tx, ty)):
                            data_all.append(gg[:, k])
                            rows_all.append(rows)
                            cols_all.append(act_t * m.d_q + col_idx)
                        if has_angle:
                            dth = np.einsum("ij,ij->i", gg, dc_dth[act_t])
                            data_all.append(dth)
                            rows_all.append(rows)
                            cols_all.append(act_t * m.d_q + body.angle_index)
                    row_base += len(act_t)
            # workspace walls: c_x >= r, c_x <= W - r, same in y
            walls = [
                (pos[:, 0] - r, (1.0, 0.0)),
                (inst.width - pos[:, 0] - r, (-1.0, 0.0)),
                (pos[:, 1] - r, (0.0, 1.0)),
                (inst.height - pos[:, 1] - r, (0.0, -1.0)),
            ]
            for slack, (ddx, ddy) in walls:
                h = np.maximum(0.0, -slack)
                act = np.nonzero(h > 0)[0]
                if not len(act):
                    continue
                vals_all.append(w * h[act])
                if with_jac:
                    rows = row_base + np.arange(len(act))
                    grad = np.array([-ddx, -ddy]) * w  # d hinge / d center
                    for k, col_idx in enumerate((tx, ty)):
                        if grad[k] != 0.0:
                            data_all.append(np.full(len(act), grad[k]))
                            rows_all.append(rows)
                            cols_all.append(act * m.d_q + col_idx)
                    if has_angle:
                        dth = grad[0] * dc_dth[act, 0] + grad[1] * dc_dth[act, 1]
                        data_all.append(dth)
                        rows_all.append(rows)
                        cols_all.append(act * m.d_q + body.angle_index)
                row_base += len(act)
        if not vals_all:
            return np.zeros(0), (np.zeros(0), np.zeros(0, int), np.zeros(0, int))
        vals = np.concatenate(vals_all)
        if with_jac:
            trip = (np.concatenate(data_all), np.concatenate(rows_all).astype(int),
                    np.concatenate(cols_all).astype(int))
        else:
            trip = (np.zeros(0), np.zeros(0, int), np.zeros(0, int))
        return vals, trip

    def residuals(self, z: np.ndarray, with_jac: bool = True):
        """Weighted residual vector (and sparse Jacobian) at z."""
        prob = self.prob
        m, T = prob.model, prob.horizon
        Q, U = self.unpack(z)
        wd = np.sqrt(self.w.w_defect)
        wg = np.sqrt(self.w.w_goal)
        wr = np.sqrt(self.w.w_reg)

        r_def = wd * angle_diff(m, Q[1:], step(m, Q[:-1], U)).ravel()
        r_goal = wg * angle_diff(m, Q[T], prob.q_g)
        r_reg = wr * U.ravel()
        r_obs, obs_trip = self._obstacle_terms(Q, with_jac)
        r = np.concatenate([r_def, r_goal, r_reg, r_obs])
        if not with_jac:
            return r, None

        J_q, J_u = jacobians(m, Q[:-1], U)   # (T, d_q, d_q), (T, d_q, d_u)
        data, rows, cols = [], [], []

        # defect wrt Q[t+1]: +wd * I  (vars of Q[t+1] start at t*d_q)
        idx = np.arange(T * m.d_q)
        data.append(np.full(T * m.d_q, wd))
        rows.append(idx)
        cols.append(idx)
        # defect wrt Q[t] for t >= 1: -wd * J_q[t]
        t_idx = np.arange(1, T)
        if len(t_idx):
            blk = -wd * J_q[t_idx]  # (T-1, d_q, d_q)
            rr = (t_idx[:, None, None] * m.d_q + np.arange(m.d_q)[None, :, None])
            cc = ((t_idx - 1)[:, None, None] * m.d_q + np.arange(m.d_q)[None, None, :])
            data.append(blk.ravel())
            rows.append(np.broadcast_to(rr, blk.shape).ravel())
            cols.append(np.broadcast_to(cc, blk.shape).ravel())
        # defect wrt U[t]: -wd * J_u[t]
        t_all = np.arange(T)
        blk = -wd * J_u
        rr = (t_all[:, None, None] * m.d_q + np.arange(m.d_q)[None, :, None])
        cc = (self.nq + t_all[:, None, None] * m.d_u + np.arange(m.d_u)[None, None, :])
        data.append(blk.ravel())
        rows.append(np.broadcast_to(rr, blk.shape).ravel())
        cols.append(np.broadcast_to(cc, blk.shape).ravel())

        base = T * m.d_q
        # goal wrt Q[T]
        data.append(np.full(m.d_q, wg))
        rows.append(base + np.arange(m.d_q))
        cols.append((T - 1) * m.d_q + np.arange(m.d_q))
        base += m.d_q
        # regularization wrt U
        data.append(np.full(self.nu, wr))
        rows.append(base + np.arange(self.nu))
        cols.append(self.nq + np.arange(self.nu))
        base += self.nu
        # obstacle hinges (rows are relative within their block)
        ob_data, ob_rows, ob_cols = obs_trip
        if len(ob_data):
            data.append(ob_data)
            rows.append(base + ob_rows)
            cols.append(ob_cols)
        base += len(r_obs)

        J = sp.csr_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(base, self.nvar),
        )
        return r, J


def objective(prob: OptProblem, Q, U, weights: OptWeights | None = None) -> float:
    """Penalty objective value at (Q, U); used by tests and line search."""
    tr = _Transcription(prob, weights or prob.weights)
    r, _ = tr.residuals(tr.pack(Q, U), with_jac=False)
    return float(r @ r)


def objective_gradient(prob: OptProblem, Q, U, weights: OptWeights | None = None) -> np.ndarray:
    """Analytic gradient of the penalty objective w.r.t. stacked (Q[1:], U)."""
    tr = _Transcription(prob, weights or prob.weights)
    r, J = tr.residuals(tr.pack(Q, U), with_jac=True)
    return 2.0 * (J.T @ r)


def _feasibility(prob: OptProblem, Q, U):
    m = prob.model
    d = defects(m, Q, U)
    max_defect = float(np.max(np.abs(d))) if len(d) else 0.0
    goal_err = float(np.max(np.abs(angle_diff(m, Q[-1], prob.q_g))))
    colliding = False
    if prob.inst is not None:
        colliding = bool(np.any(world_mod.collides_batch(prob.inst, Q)))
    tol = prob.tolerances
    feas = (max_defect <= tol.defect and goal_err <= tol.goal and not colliding)
    return feas, max_defect, goal_err


def optimize(prob: OptProblem) -> OptResult:
    """Penalty-method Gauss-Newton with backtracking line search.

    Weights (defect, obstacle, goal) escalate by ``penalty_factor`` per
    outer round, at most ``penalty_rounds`` rounds, stopping early once
    the iterate is feasible.  Raises NumericalError on a non-finite
    objective; otherwise always returns the best iterate found.
    """
    if prob.guess_Q is None or prob.guess_U is None:
        gQ, gU = straight_line_guess(prob.model, prob.q_s, prob.q_g, prob.horizon)
        prob = replace(prob, guess_Q=gQ, guess_U=gU)
    w = prob.weights
    history: list[list[float]] = []
    tr = _Transcription(prob, w)
    z = tr.clamp(tr.pack(prob.guess_Q, prob.guess_U))
    best = None

    for _round in range(prob.penalty_rounds):
        tr = _Transcription(prob, w)
        round_hist = []
        r, J = tr.residuals(z)
        obj = float(r @ r)
        if not np.isfinite(obj):
            raise NumericalError("non-finite objective")
        round_hist.append(obj)
        for _it in range(prob.max_gn_iters):
            g = J.T @ r
            H = (J.T @ J).tocsc()
            lam = 1e-9 * (1.0 + obj)
            H = H + lam * sp.identity(tr.nvar, format="csc")
            try:
                if tr.nvar <= 400:
                    dz = np.linalg.solve(H.toarray(), -g)
                else:
                    dz = spla.spsolve(H, -g)
            except np.linalg.LinAlgError:
                break
            if not np.all(np.isfinite(dz)):
                raise NumericalError("non-finite Gauss-Newton step")
            # backtracking line search on the clamped iterate
            alpha, accepted = 1.0, False
            while alpha >= 1e-6:
                z_new = tr.clamp(z + alpha * dz)
                r_new, _ = tr.residuals(z_new, with_jac=False)
                obj_new = float(r_new @ r_new)
                if not np.isfinite(obj_new):
                    raise NumericalError("non-finite objective during line search")
                if obj_new <= obj:
                    accepted = obj_new < obj - 1e-14
                    z, obj = z_new, obj_new
                    break
                alpha *= 0.5
            if not accepted:
                break
            round_hist.append(obj)
            r, J = tr.residuals(z)
            if np.linalg.norm(alpha * dz) < 1e-10:
                break
        history.append(round_hist)
        Q, U = tr.unpack(z)
        feas, max_defect, goal_err = _feasibility(prob, Q, U)
        res = OptResult(
            Q=Q, U=U, feasible=feas, cost=prob.horizon * prob.model.dt,
            max_defect=max_defect, goal_err=goal_err, objective_history=history)
        if best is None or (max_defect + goal_err) < (best.max_defect + best.goal_err):
            best = res
        if feas:
            return res
        w = OptWeights(
            w_defect=w.w_defect * prob.penalty_factor,
            w_obs=w.w_obs * prob.penalty_factor,
            w_goal=w.w_goal * prob.penalty_factor,
            w_reg=w.w_reg,
        )
    best.objective_history = history
    return best


def _resample_guess(model: RobotModel, Q, U, T_new: int):
    """Time-rescale a trajectory to a shorter horizon (wrap-aware)."""
    T_old = len(U)
    Qc = Q.copy()
    for i in model.angle_indices:
        Qc[:, i] = np.unwrap(Qc[:, i])
    s_old = np.linspace(0.0, 1.0, T_old + 1)
    s_new = np.linspace(0.0, 1.0, T_new + 1)
    Q_new = np.column_stack(
        [np.interp(s_new, s_old, Qc[:, j]) for j in range(model.d_q)])
    for i in model.angle_indices:
        Q_new[:, i] = wrap_angle(Q_new[:, i])
    su_old = np.linspace(0.0, 1.0, T_old)
    su_new = np.linspace(0.0, 1.0, T_new)
    U_new = np.column_stack(
        [np.interp(su_new, su_old, U[:, j]) for j in range(model.d_u)])
    # rescale velocities/actions for the shorter duration
    scale = T_old / T_new
    U_new = np.clip(U_new * scale, model.u_lo, model.u_hi)
    return Q_new, U_new


def shrink_horizon(prob: OptProblem, result: OptResult) -> OptResult:
    """Shorten a feasible solution by binary search over dropped steps.

    Re-optimizes at candidate horizons T - k using a time-rescaled guess;
    returns the shortest feasible solution found (the input if none).
    The returned cost never exceeds the input cost.
    """
    if not result.feasible:
        return result
    T = len(result.U)
    if T <= 1:
        return result

    def attempt(T_new: int) -> OptResult | None:
        gQ, gU = _resample_guess(prob.model, result.Q, result.U, T_new)
        sub = replace(prob, horizon=T_new, guess_Q=gQ, guess_U=gU)
        r = optimize(sub)
        return r if r.feasible else None

    lo, hi = 0, T - 1          # k = number of dropped steps; k=0 is the input
    best = result
    while lo < hi:
        mid = (lo + hi + 1) // 2
        r = attempt(T - mid)
        if r is not None:
            best = r
            lo = mid
        else:
            hi = mid - 1
    return best if best.cost <= result.cost else result
