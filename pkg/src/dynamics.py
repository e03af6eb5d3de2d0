"""Floating-base kinematics, centroidal momentum and the flight plant.

The plant is a centroidal-dynamics closure: joints follow the commanded
velocities exactly, thrusts integrate their commanded rates, and the base
motion is whatever keeps the centroidal momentum h = (l, w) consistent with
the momentum rate produced by gravity and the jets::

    l_dot = m g e3 + sum_k a_k T_k
    w_dot = sum_k (p_k - p_G) x a_k T_k

All momentum quantities are expressed at the CoM with world-aligned axes
unless a function says otherwise. Generalized velocity ordering is
nu = (v_B, omega_B, s_dot) with base velocities in world coordinates.
"""

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import least_squares
from scipy.spatial.transform import Rotation

from .robot_model import ModelError, RobotModel

E3 = np.array([0.0, 0.0, 1.0])
DIVERGENCE_RADIUS = 1e3


class DivergenceError(RuntimeError):
    """Non-finite or runaway state during integration."""


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def exp_so3(phi: np.ndarray) -> np.ndarray:
    return Rotation.from_rotvec(phi).as_matrix()


def log_so3(R: np.ndarray) -> np.ndarray:
    """Rotation vector of R; stable through angles close to pi."""
    return Rotation.from_matrix(R).as_rotvec()


def orthonormalize(R: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(R)
    Q = u @ vt
    if np.linalg.det(Q) < 0:
        u[:, -1] *= -1
        Q = u @ vt
    return Q


def _axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    K = skew(axis)
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def to_body_frame(R_B: np.ndarray, vector: np.ndarray) -> np.ndarray:
    """Components in G[I] to components in G[B]."""
    return R_B.T @ vector


def to_inertial_frame(R_B: np.ndarray, vector: np.ndarray) -> np.ndarray:
    return R_B @ vector


@dataclass
class RobotState:
    """Configuration q = (p_B, R_B, s), velocity nu and thrust intensities."""
    p_B: np.ndarray
    R_B: np.ndarray
    s: np.ndarray
    T: np.ndarray
    v_B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    omega_B: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sdot: Optional[np.ndarray] = None
    t: float = 0.0

    def __post_init__(self):
        if self.sdot is None:
            self.sdot = np.zeros_like(self.s)

    @property
    def nu(self) -> np.ndarray:
        return np.concatenate([self.v_B, self.omega_B, self.sdot])

    def copy(self) -> "RobotState":
        return replace(self, p_B=self.p_B.copy(), R_B=self.R_B.copy(), s=self.s.copy(),
                       T=self.T.copy(), v_B=self.v_B.copy(), omega_B=self.omega_B.copy(),
                       sdot=self.sdot.copy())

    def check(self, model: RobotModel, tol: float = 1e-6) -> list[str]:
        problems = []
        if self.s.shape != (model.n,) or self.sdot.shape != (model.n,):
            problems.append(f"joint vectors need length {model.n}")
        if self.T.shape != (model.n_p,):
            problems.append(f"thrust vector needs length {model.n_p}")
        if np.abs(self.R_B.T @ self.R_B - np.eye(3)).max() > tol or np.linalg.det(self.R_B) <= 0:
            problems.append("R_B is not a rotation")
        arrays = (self.p_B, self.R_B, self.s, self.T, self.v_B, self.omega_B, self.sdot)
        if not all(np.all(np.isfinite(a)) for a in arrays):
            problems.append("non-finite entries")
        return problems


@dataclass
class Kinematics:
    """World poses, inertias and Jacobian ingredients at one configuration."""
    link_names: list
    positions: np.ndarray
    rotations: np.ndarray
    coms: np.ndarray
    masses: np.ndarray
    inertias: np.ndarray
    joint_origins: np.ndarray
    joint_axes: np.ndarray
    support: np.ndarray
    thruster_links: np.ndarray
    thruster_positions: np.ndarray
    thruster_axes: np.ndarray

    @property
    def mass(self) -> float:
        return float(self.masses.sum())

    @property
    def p_B(self) -> np.ndarray:
        return self.positions[0]

    @property
    def p_G(self) -> np.ndarray:
        return self.masses @ self.coms / self.mass

    def point_jacobians(self, links: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Linear velocity Jacobians (k, 3, 6+n) of world points rigidly attached to links."""
        links = np.atleast_1d(links)
        points = np.atleast_2d(points)
        n = self.joint_axes.shape[0]
        J = np.zeros((len(links), 3, 6 + n))
        J[:, :, :3] = np.eye(3)
        d = points - self.p_B
        J[:, 0, 4], J[:, 0, 5] = d[:, 2], -d[:, 1]
        J[:, 1, 3], J[:, 1, 5] = -d[:, 2], d[:, 0]
        J[:, 2, 3], J[:, 2, 4] = d[:, 1], -d[:, 0]
        for j in range(n):
            cols = np.cross(self.joint_axes[j], points - self.joint_origins[j])
            J[:, :, 6 + j] = cols * self.support[links, j][:, None]
        return J

    def angular_jacobians(self, links: np.ndarray) -> np.ndarray:
        links = np.atleast_1d(links)
        n = self.joint_axes.shape[0]
        J = np.zeros((len(links), 3, 6 + n))
        J[:, :, 3:6] = np.eye(3)
        J[:, :, 6:] = self.joint_axes.T[None, :, :] * self.support[links][:, None, :]
        return J


def kinematics(model: RobotModel, p_B: np.ndarray, R_B: np.ndarray, s: np.ndarray) -> Kinematics:
    index = {name: i for i, name in enumerate(model.link_names)}
    L, n = len(model.link_names), model.n
    positions = np.zeros((L, 3))
    rotations = np.zeros((L, 3, 3))
    support = np.zeros((L, n), dtype=bool)
    joint_origins = np.zeros((n, 3))
    joint_axes = np.zeros((n, 3))
    positions[0], rotations[0] = p_B, R_B

    for joint in model.joints:
        ip, ic = index[joint.parent], index[joint.child]
        origin = positions[ip] + rotations[ip] @ joint.origin_xyz
        R = rotations[ip] @ joint.origin_rotation
        support[ic] = support[ip]
        if joint.type == "revolute":
            j = model.joint_index[joint.name]
            joint_origins[j] = origin
            joint_axes[j] = R @ joint.axis
            support[ic, j] = True
            R = R @ _axis_angle(joint.axis, s[j])
        positions[ic], rotations[ic] = origin, R

    links = [model.links[name] for name in model.link_names]
    masses = np.array([link.mass for link in links])
    coms = positions + np.einsum("lij,lj->li", rotations, np.array([link.com for link in links]))
    inertias = np.einsum("lij,ljk,lmk->lim", rotations, np.array([link.inertia for link in links]), rotations)

    t_links = np.array([index[t.parent] for t in model.thrusters], dtype=int)
    t_local = np.array([t.position for t in model.thrusters]).reshape(-1, 3)
    t_axes = np.array([t.axis for t in model.thrusters]).reshape(-1, 3)
    thruster_positions = positions[t_links] + np.einsum("kij,kj->ki", rotations[t_links], t_local)
    thruster_axes = np.einsum("kij,kj->ki", rotations[t_links], t_axes)

    return Kinematics(list(model.link_names), positions, rotations, coms, masses, inertias,
                      joint_origins, joint_axes, support, t_links, thruster_positions, thruster_axes)


def forward_kinematics(model: RobotModel, state: RobotState) -> Kinematics:
    return kinematics(model, state.p_B, state.R_B, state.s)


def centroidal_momentum_matrix(kin: Kinematics) -> np.ndarray:
    """A_G(q) with h = A_G nu, both momentum blocks about the CoM in world axes."""
    links = np.arange(len(kin.link_names))
    Jv = kin.point_jacobians(links, kin.coms)
    Jw = kin.angular_jacobians(links)
    A_l = np.einsum("l,lij->ij", kin.masses, Jv)
    d = kin.coms - kin.p_G
    lever = np.cross(d[:, :, None], Jv, axis=1)
    A_w = np.einsum("lij,ljk->ik", kin.inertias, Jw) + np.einsum("l,lij->ij", kin.masses, lever)
    return np.vstack([A_l, A_w])


def locked_inertia(kin: Kinematics) -> np.ndarray:
    """Rotational inertia of the whole robot frozen at q, about the CoM."""
    d = kin.coms - kin.p_G
    shift = np.einsum("l,lij->ij", kin.masses,
                      np.einsum("li,li->l", d, d)[:, None, None] * np.eye(3) - np.einsum("li,lj->lij", d, d))
    return kin.inertias.sum(axis=0) + shift


def base_velocity(kin: Kinematics, h: np.ndarray, sdot: np.ndarray) -> np.ndarray:
    """Solve h = A_b nu_base + A_s sdot for nu_base = (v_B, omega_B)."""
    A = centroidal_momentum_matrix(kin)
    return np.linalg.solve(A[:, :6], h - A[:, 6:] @ sdot)


def thrust_forces(kin: Kinematics, T: np.ndarray) -> np.ndarray:
    return kin.thruster_axes * T[:, None]


def momentum_rate_from(kin: Kinematics, T: np.ndarray, gravity: float) -> np.ndarray:
    forces = thrust_forces(kin, T)
    l_dot = kin.mass * gravity * E3 + forces.sum(axis=0)
    w_dot = np.cross(kin.thruster_positions - kin.p_G, forces).sum(axis=0)
    return np.concatenate([l_dot, w_dot])


def momentum_rate(model: RobotModel, state: RobotState) -> np.ndarray:
    return momentum_rate_from(forward_kinematics(model, state), state.T, model.gravity)


def centroidal_momentum(model: RobotModel, state: RobotState) -> np.ndarray:
    return centroidal_momentum_matrix(forward_kinematics(model, state)) @ state.nu


def initial_state(model: RobotModel, s: Optional[np.ndarray] = None,
                  T: Optional[np.ndarray] = None) -> RobotState:
    return RobotState(
        p_B=np.zeros(3), R_B=np.eye(3),
        s=np.zeros(model.n) if s is None else np.asarray(s, dtype=float).copy(),
        T=np.zeros(model.n_p) if T is None else np.asarray(T, dtype=float).copy(),
    )


def find_hover(model: RobotModel, s_guess: Optional[np.ndarray] = None,
               posture_weight: float = 1e-2, tol: float = 1e-8) -> RobotState:
    """Joint posture and thrusts with zero momentum rate, base level at the origin.

    A regularized solve pulls the posture towards ``s_guess``; a second
    unregularized solve from there removes the residual the regularizer leaves.
    """
    s_guess = np.zeros(model.n) if s_guess is None else np.asarray(s_guess, dtype=float)
    weight = model.total_mass * abs(model.gravity)
    s_lo, s_hi = model.joint_limits()
    t_lo, t_hi = model.thrust_limits()
    lower = np.concatenate([s_lo, t_lo])
    upper = np.concatenate([s_hi, t_hi])
    n = model.n

    def residual(x, posture):
        kin = kinematics(model, np.zeros(3), np.eye(3), x[:n])
        rate = momentum_rate_from(kin, x[n:], model.gravity) / weight
        if posture:
            return np.concatenate([rate, posture_weight * (x[:n] - s_guess)])
        return rate

    x0 = np.concatenate([np.clip(s_guess, s_lo, s_hi),
                         np.clip(np.full(model.n_p, weight / max(model.n_p, 1)), t_lo, t_hi)])
    kwargs = dict(bounds=(lower, upper), xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=2000)
    x = least_squares(residual, x0, args=(True,), **kwargs).x
    x = least_squares(residual, np.clip(x, lower, upper), args=(False,), **kwargs).x

    state = initial_state(model, x[:n], x[n:])
    rate = momentum_rate(model, state)
    if np.linalg.norm(rate) > tol * weight:
        raise ModelError(f"No hover trim found (|h_dot| = {np.linalg.norm(rate):.3g})")
    return state


def _rates(model, p_B, R_B, s, T, h, sdot):
    kin = kinematics(model, p_B, R_B, s)
    nu_base = base_velocity(kin, h, sdot)
    return nu_base[:3], nu_base[3:], momentum_rate_from(kin, T, model.gravity)


def saturate_command(model: RobotModel, state: RobotState, Tdot: np.ndarray,
                     sdot: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Rates that keep T and s inside their limits over one step."""
    t_lo, t_hi = model.thrust_limits()
    s_lo, s_hi = model.joint_limits()
    Tdot = np.clip(Tdot, (t_lo - state.T) / dt, (t_hi - state.T) / dt)
    sdot = np.clip(sdot, (s_lo - state.s) / dt, (s_hi - state.s) / dt)
    return Tdot, sdot


def step(model: RobotModel, state: RobotState, u: np.ndarray, dt: float) -> RobotState:
    """Advance one RK4 step under u = (T_dot, s_dot_cmd)."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    if u.shape != (model.n_p + model.n,):
        raise ValueError(f"Command needs {model.n_p + model.n} entries, got {u.shape}")
    if not np.all(np.isfinite(u)):
        raise DivergenceError(f"Non-finite command at t = {state.t:.3f}")
    Tdot, sdot = saturate_command(model, state, u[:model.n_p], u[model.n_p:], dt)

    p, R, s, T = state.p_B, state.R_B, state.s, state.T
    h = centroidal_momentum(model, state)

    v1, w1, hd1 = _rates(model, p, R, s, T, h, sdot)
    half = 0.5 * dt
    v2, w2, hd2 = _rates(model, p + half * v1, exp_so3(half * w1) @ R,
                         s + half * sdot, T + half * Tdot, h + half * hd1, sdot)
    v3, w3, hd3 = _rates(model, p + half * v2, exp_so3(half * w2) @ R,
                         s + half * sdot, T + half * Tdot, h + half * hd2, sdot)
    v4, w4, hd4 = _rates(model, p + dt * v3, exp_so3(dt * w3) @ R,
                         s + dt * sdot, T + dt * Tdot, h + dt * hd3, sdot)

    s_lo, s_hi = model.joint_limits()
    t_lo, t_hi = model.thrust_limits()
    p_new = p + dt / 6.0 * (v1 + 2 * v2 + 2 * v3 + v4)
    R_new = orthonormalize(exp_so3(dt / 6.0 * (w1 + 2 * w2 + 2 * w3 + w4)) @ R)
    h_new = h + dt / 6.0 * (hd1 + 2 * hd2 + 2 * hd3 + hd4)
    s_new = np.clip(s + dt * sdot, s_lo, s_hi)
    T_new = np.clip(T + dt * Tdot, t_lo, t_hi)

    if not (np.all(np.isfinite(p_new)) and np.all(np.isfinite(R_new)) and np.all(np.isfinite(h_new))):
        raise DivergenceError(f"Non-finite state at t = {state.t + dt:.3f}")
    nu_base = base_velocity(kinematics(model, p_new, R_new, s_new), h_new, sdot)
    if not np.all(np.isfinite(nu_base)):
        raise DivergenceError(f"Singular base velocity map at t = {state.t + dt:.3f}")

    return RobotState(p_new, R_new, s_new, T_new, nu_base[:3], nu_base[3:], sdot.copy(), state.t + dt)
