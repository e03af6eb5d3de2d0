"""Momentum-based flight controller.

The momentum rate is differentiated once more so thrust rates and joint
velocities, u = (T_dot, s_dot), enter linearly:

    l_ddot  = dl_dT T_dot + dl_ds s_dot + l_drift
    w_ddotB = dw_dT T_dot + dw_ds s_dot + w_drift

The angular block is expressed in G[B]: w_B = R_B^T w and its rate
w_dot_B = R_B^T w_dot (world momentum rate in base axes). Three weighted
tasks (linear momentum, angular momentum, posture) are stacked into a box
constrained QP solved by a primal active-set method.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .dynamics import (
    RobotState,
    centroidal_momentum_matrix,
    forward_kinematics,
    log_so3,
    momentum_rate_from,
    skew,
)
from .robot_model import RobotModel

QP_SUCCESS = "success"
QP_FAILURE = "failure"


def _matrix(value, size: int) -> np.ndarray:
    """Scalar -> scaled identity, vector -> diagonal, matrix unchanged."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return float(arr) * np.eye(size)
    if arr.ndim == 1:
        if arr.shape != (size,):
            raise ValueError(f"Gain vector needs {size} entries, got {arr.shape[0]}")
        return np.diag(arr)
    if arr.shape != (size, size):
        raise ValueError(f"Gain matrix needs shape {(size, size)}, got {arr.shape}")
    return arr


def _is_spd(M: np.ndarray) -> bool:
    if not np.allclose(M, M.T, atol=1e-12):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


@dataclass
class ControllerGains:
    K_P: np.ndarray
    K_D: np.ndarray
    K_I: np.ndarray
    K_Pw: np.ndarray
    K_Dw: np.ndarray
    K_R: np.ndarray
    weights: np.ndarray
    K_post: np.ndarray
    s_ref: np.ndarray
    integral_limit: float = 10.0
    epsilon: float = 1e-9

    @classmethod
    def from_dict(cls, data: Optional[dict], n: int, s_ref: Optional[np.ndarray] = None) -> "ControllerGains":
        data = data or {}
        return cls(
            K_P=_matrix(data.get("K_P", 20.0), 3),
            K_D=_matrix(data.get("K_D", 8.0), 3),
            K_I=_matrix(data.get("K_I", 16.0), 3),
            K_Pw=_matrix(data.get("K_Pw", 12.0), 3),
            K_Dw=_matrix(data.get("K_Dw", 6.0), 3),
            K_R=_matrix(data.get("K_R", 20.0), 3),
            weights=np.asarray(data.get("weights", [1.0, 1.0, 0.1]), dtype=float),
            K_post=_matrix(data.get("K_post", 2.0), n),
            s_ref=np.zeros(n) if s_ref is None else np.asarray(s_ref, dtype=float).copy(),
            integral_limit=float(data.get("integral_limit", 10.0)),
            epsilon=float(data.get("epsilon", 1e-9)),
        )

    def check(self) -> list[str]:
        problems = []
        for name in ("K_P", "K_D", "K_I", "K_Pw", "K_Dw", "K_R", "K_post"):
            if not _is_spd(getattr(self, name)):
                problems.append(f"{name} is not symmetric positive definite")
        if self.weights.shape != (3,) or np.any(self.weights <= 0):
            problems.append("task weights must be three positive numbers")
        if self.integral_limit <= 0:
            problems.append("integral_limit must be positive")
        return problems


@dataclass
class MomentumJacobians:
    dl_dT: np.ndarray
    dl_ds: np.ndarray
    l_drift: np.ndarray
    dw_dT: np.ndarray
    dw_ds: np.ndarray
    w_drift: np.ndarray
    # Current momentum and rate: l, l_dot in G[I]; w, w_dot in G[B]
    l: np.ndarray = field(default_factory=lambda: np.zeros(3))
    l_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w: np.ndarray = field(default_factory=lambda: np.zeros(3))
    w_dot: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def predict(self, Tdot: np.ndarray, sdot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(l_ddot, w_ddot_B) produced by a command."""
        return (self.dl_dT @ Tdot + self.dl_ds @ sdot + self.l_drift,
                self.dw_dT @ Tdot + self.dw_ds @ sdot + self.w_drift)


@dataclass
class QpProblem:
    """min 0.5 u^T H u + c^T u  subject to  lower <= u <= upper."""
    H: np.ndarray
    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def check(self) -> list[str]:
        problems = []
        m = len(self.c)
        if self.H.shape != (m, m) or self.lower.shape != (m,) or self.upper.shape != (m,):
            problems.append("dimension mismatch")
            return problems
        if not np.allclose(self.H, self.H.T, atol=1e-12):
            problems.append("H is not symmetric")
        if np.any(self.lower > self.upper):
            problems.append("lower bound above upper bound")
        return problems

    def objective(self, u: np.ndarray) -> float:
        return float(0.5 * u @ self.H @ u + self.c @ u)


@dataclass
class QpSolution:
    u: np.ndarray
    status: str
    iterations: int = 0
    active: int = 0
    residual: float = 0.0
    cause: str = ""

    @property
    def success(self) -> bool:
        return self.status == QP_SUCCESS


def momentum_jacobians(model: RobotModel, state: RobotState) -> MomentumJacobians:
    kin = forward_kinematics(model, state)
    n, n_p = model.n, model.n_p
    A = centroidal_momentum_matrix(kin)
    h = A @ state.nu
    l = h[:3]

    # nu = N_h + N_s s_dot with the base part solved from the momentum
    A_b_inv = np.linalg.inv(A[:, :6])
    N_h = np.concatenate([A_b_inv @ h, np.zeros(n)])
    N_s = np.vstack([-A_b_inv @ A[:, 6:], np.eye(n)])

    a = kin.thruster_axes
    r = kin.thruster_positions - kin.p_G
    T = state.T
    Jv = kin.point_jacobians(kin.thruster_links, kin.thruster_positions)
    Jw = kin.angular_jacobians(kin.thruster_links)

    G_l = np.zeros((3, 6 + n))
    G_w = np.zeros((3, 6 + n))
    c_w = np.zeros(3)
    for k in range(n_p):
        Sa = skew(a[k])
        a_dot_map = -Sa @ Jw[k]
        G_l += T[k] * a_dot_map
        G_w += T[k] * (-Sa @ Jv[k] + skew(r[k]) @ a_dot_map)
        c_w += T[k] * (Sa @ l) / kin.mass

    rate = momentum_rate_from(kin, T, model.gravity)
    w_dot_I = rate[3:]
    R_T = state.R_B.T
    S_wdot = skew(w_dot_I)
    A_wT = np.cross(r, a).T.reshape(3, n_p)

    return MomentumJacobians(
        dl_dT=a.T.reshape(3, n_p).copy(),
        dl_ds=G_l @ N_s,
        l_drift=G_l @ N_h,
        dw_dT=R_T @ A_wT,
        dw_ds=R_T @ (G_w @ N_s + S_wdot @ N_s[3:6]),
        w_drift=R_T @ (G_w @ N_h + c_w + S_wdot @ N_h[3:6]),
        l=l.copy(),
        l_dot=rate[:3],
        w=R_T @ h[3:],
        w_dot=R_T @ w_dot_I,
    )


def desired_linear_dynamics(l, l_d, l_dot, l_dot_d, l_ddot_d, integral, gains: ControllerGains) -> np.ndarray:
    return (l_ddot_d - gains.K_D @ (l_dot - l_dot_d) - gains.K_P @ (l - l_d)
            - gains.K_I @ integral)


def desired_angular_dynamics(R_B, R_d, w, w_d, w_dot, w_dot_d, w_ddot_d, gains: ControllerGains) -> np.ndarray:
    """SO(3) PD law on the base attitude, in G[B]. Stand-in for a dedicated attitude controller."""
    attitude_error = log_so3(R_d.T @ R_B)
    return (w_ddot_d - gains.K_Dw @ (w_dot - w_dot_d) - gains.K_Pw @ (w - w_d)
            - gains.K_R @ attitude_error)


def postural_velocity(s: np.ndarray, gains: ControllerGains) -> np.ndarray:
    return gains.K_post @ (gains.s_ref - s)


def control_bounds(model: RobotModel, state: RobotState, dt: float,
                   u_max_override: Optional[float] = None) -> tuple[np.ndarray, np.ndarray]:
    """Ṫ and ṡ limits, tightened so one step keeps T and s inside their ranges."""
    td_lo, td_hi = model.thrust_rate_limits()
    t_lo, t_hi = model.thrust_limits()
    s_lo, s_hi = model.joint_limits()
    v = model.velocity_limits()
    lower = np.concatenate([np.maximum(td_lo, (t_lo - state.T) / dt),
                            np.maximum(-v, (s_lo - state.s) / dt)])
    upper = np.concatenate([np.minimum(td_hi, (t_hi - state.T) / dt),
                            np.minimum(v, (s_hi - state.s) / dt)])
    if u_max_override is not None:
        upper = np.minimum(upper, u_max_override)
    lower = np.minimum(lower, upper)
    return lower, upper


def build_qp(jac: MomentumJacobians, l_ddot_star, w_ddot_star, sdot_star, gains: ControllerGains,
             lower: np.ndarray, upper: np.ndarray) -> QpProblem:
    n_p = jac.dl_dT.shape[1]
    n = jac.dl_ds.shape[1]
    if len(sdot_star) != n or len(lower) != n_p + n or len(upper) != n_p + n:
        raise ValueError("QP dimension mismatch between Jacobians, postural target and bounds")
    M = np.vstack([
        np.hstack([jac.dl_dT, jac.dl_ds]),
        np.hstack([jac.dw_dT, jac.dw_ds]),
        np.hstack([np.zeros((n, n_p)), np.eye(n)]),
    ])
    beta = np.concatenate([l_ddot_star - jac.l_drift, w_ddot_star - jac.w_drift, sdot_star])
    w2 = np.concatenate([np.full(3, gains.weights[0]), np.full(3, gains.weights[1]),
                         np.full(n, gains.weights[2])])
    H = M.T @ (w2[:, None] * M)
    H = 0.5 * (H + H.T) + gains.epsilon * np.eye(n_p + n)
    c = -M.T @ (w2 * beta)
    return QpProblem(H, c, np.asarray(lower, dtype=float), np.asarray(upper, dtype=float))


def kkt_residual(problem: QpProblem, u: np.ndarray, at_lower: np.ndarray, at_upper: np.ndarray) -> float:
    """Largest violation of stationarity or multiplier sign at u."""
    g = problem.H @ u + problem.c
    free = ~(at_lower | at_upper)
    parts = [np.abs(g[free]), np.maximum(-g[at_lower & ~at_upper], 0.0),
             np.maximum(g[at_upper & ~at_lower], 0.0)]
    return float(max((p.max() for p in parts if p.size), default=0.0))


def solve_qp(problem: QpProblem, max_iter: Optional[int] = None, tol: float = 1e-8) -> QpSolution:
    """Primal active-set method for the box-constrained strictly convex QP.

    Success is certified with an absolute tolerance: every free gradient
    component and every wrong-signed bound multiplier is at most `tol`.
    """
    H, c, lo, hi = problem.H, problem.c, problem.lower, problem.upper
    m = len(c)
    if problem.check():
        return QpSolution(np.clip(np.zeros(m), lo, hi), QP_FAILURE, cause="; ".join(problem.check()))
    if not (np.all(np.isfinite(H)) and np.all(np.isfinite(c))):
        return QpSolution(np.zeros(m), QP_FAILURE, cause="non-finite problem data")
    max_iter = max_iter or 10 * m + 50

    # side: -1 held at lower, +1 held at upper, 0 free
    x = np.clip(np.zeros(m), lo, hi)
    side = np.where(x <= lo, -1, np.where(x >= hi, 1, 0))
    for iteration in range(1, max_iter + 1):
        free = side == 0
        target = x.copy()
        if free.any():
            fixed = ~free
            rhs = -(c[free] + H[np.ix_(free, fixed)] @ x[fixed])
            H_free = H[np.ix_(free, free)]
            try:
                factor = cho_factor(H_free)
                target[free] = cho_solve(factor, rhs)
                # one refinement step keeps the free-set residual near round-off
                target[free] += cho_solve(factor, rhs - H_free @ target[free])
            except (LinAlgError, ValueError) as e:
                return QpSolution(x, QP_FAILURE, iteration, int((~free).sum()), cause=f"numerical breakdown: {e}")
            if not np.all(np.isfinite(target)):
                return QpSolution(x, QP_FAILURE, iteration, int((~free).sum()), cause="numerical breakdown")

        d = target - x
        alpha, blocking, blocking_side = 1.0, -1, 0
        for i in np.flatnonzero(free):
            if d[i] < 0 and x[i] + d[i] < lo[i]:
                a = (lo[i] - x[i]) / d[i]
                if a < alpha:
                    alpha, blocking, blocking_side = a, i, -1
            elif d[i] > 0 and x[i] + d[i] > hi[i]:
                a = (hi[i] - x[i]) / d[i]
                if a < alpha:
                    alpha, blocking, blocking_side = a, i, 1
        x = x + alpha * d
        if blocking >= 0:
            x[blocking] = lo[blocking] if blocking_side < 0 else hi[blocking]
            side[blocking] = blocking_side
            continue

        x = np.clip(x, lo, hi)
        g = H @ x + c
        pinned = lo >= hi
        wrong_sign = np.where((side == -1) & ~pinned, -g, 0.0) + np.where((side == 1) & ~pinned, g, 0.0)
        worst = int(np.argmax(wrong_sign))
        if wrong_sign[worst] > tol:
            side[worst] = 0
            continue

        at_lower, at_upper = side == -1, side == 1
        residual = kkt_residual(problem, x, at_lower | pinned, at_upper | pinned)
        if residual > tol:
            return QpSolution(x, QP_FAILURE, iteration, int((side != 0).sum()), residual,
                              cause=f"KKT residual {residual:.3g}")
        return QpSolution(x, QP_SUCCESS, iteration, int((side != 0).sum()), residual)

    return QpSolution(x, QP_FAILURE, max_iter, int((side != 0).sum()), cause="iteration cap")


@dataclass
class ReferenceSample:
    """Momentum and attitude references at one instant (w_* in G[B])."""
    t: float
    l_d: np.ndarray
    l_dot_d: np.ndarray
    l_ddot_d: np.ndarray
    R_d: np.ndarray
    w_d: np.ndarray
    w_dot_d: np.ndarray
    w_ddot_d: np.ndarray
    position_d: np.ndarray = field(default_factory=lambda: np.zeros(3))


@dataclass
class ControlResult:
    u: np.ndarray
    status: str
    integral: np.ndarray
    sdot_star: np.ndarray
    l_error: np.ndarray
    w_error: np.ndarray
    active: int = 0
    l_residual: float = 0.0
    w_residual: float = 0.0
    cause: str = ""

    @property
    def success(self) -> bool:
        return self.status == QP_SUCCESS


def control_step(model: RobotModel, state: RobotState, reference: ReferenceSample, gains: ControllerGains,
                 dt: float, integral: Optional[np.ndarray] = None,
                 u_max_override: Optional[float] = None) -> ControlResult:
    integral = np.zeros(3) if integral is None else integral
    jac = momentum_jacobians(model, state)
    l_error = jac.l - reference.l_d
    w_error = jac.w - reference.w_d

    l_ddot_star = desired_linear_dynamics(jac.l, reference.l_d, jac.l_dot, reference.l_dot_d,
                                          reference.l_ddot_d, integral, gains)
    w_ddot_star = desired_angular_dynamics(state.R_B, reference.R_d, jac.w, reference.w_d, jac.w_dot,
                                           reference.w_dot_d, reference.w_ddot_d, gains)
    sdot_star = postural_velocity(state.s, gains)
    lower, upper = control_bounds(model, state, dt, u_max_override)
    problem = build_qp(jac, l_ddot_star, w_ddot_star, sdot_star, gains, lower, upper)
    solution = solve_qp(problem)

    new_integral = np.clip(integral + l_error * dt, -gains.integral_limit, gains.integral_limit)
    l_pred, w_pred = jac.predict(solution.u[:model.n_p], solution.u[model.n_p:])
    return ControlResult(
        u=solution.u, status=solution.status, integral=new_integral, sdot_star=sdot_star,
        l_error=l_error, w_error=w_error, active=solution.active,
        l_residual=float(np.linalg.norm(l_pred - l_ddot_star)),
        w_residual=float(np.linalg.norm(w_pred - w_ddot_star)),
        cause=solution.cause,
    )


class Controller:
    """Holds the integral state of one flight; everything else is recomputed per call."""

    def __init__(self, model: RobotModel, gains: ControllerGains, dt: float,
                 u_max_override: Optional[float] = None):
        self.model = model
        self.gains = gains
        self.dt = dt
        self.u_max_override = u_max_override
        self.integral = np.zeros(3)

    def reset(self):
        self.integral = np.zeros(3)

    def __call__(self, state: RobotState, reference: ReferenceSample) -> ControlResult:
        result = control_step(self.model, state, reference, self.gains, self.dt,
                              self.integral, self.u_max_override)
        self.integral = result.integral
        return result
