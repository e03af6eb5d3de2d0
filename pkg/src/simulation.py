"""Closed-loop flights and the tracking/thrust fitness of a design."""

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
from scipy.spatial.transform import Rotation

from .controller import Controller, ControllerGains
from .dynamics import (
    DIVERGENCE_RADIUS,
    DivergenceError,
    RobotState,
    find_hover,
    forward_kinematics,
    locked_inertia,
    saturate_command,
    step,
)
from .robot_model import ModelError, RobotModel
from .trajectory import make_trajectory

DEFAULT_DT = 0.01
DEFAULT_MAX_POSITION_ERROR = 1.0


@dataclass(frozen=True)
class FitnessVector:
    delta_h: float
    delta_sdot: float
    delta_T: float

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delta_h, self.delta_sdot, self.delta_T)

    def as_dict(self) -> dict:
        return {"delta_h": self.delta_h, "delta_sdot": self.delta_sdot, "delta_T": self.delta_T}


@dataclass
class SimLog:
    """Uniformly sampled flight record; row i is the state at t_i = i dt before stepping."""
    dt: float
    joint_names: list
    thruster_names: list
    groups: dict
    time: np.ndarray
    h: np.ndarray
    h_d: np.ndarray
    sdot: np.ndarray
    sdot_d: np.ndarray
    T: np.ndarray
    qp_ok: np.ndarray
    qp_active: np.ndarray
    l_residual: np.ndarray
    w_residual: np.ndarray
    p_B: np.ndarray
    quat_B: np.ndarray
    s: np.ndarray
    nu: np.ndarray
    p_G: np.ndarray
    p_G_d: np.ndarray
    failed: bool = False
    cause: str = ""

    @property
    def n_t(self) -> int:
        return len(self.time)

    def columns(self) -> list[str]:
        cols = ["time"]
        cols += [f"{k}{a}" for k in ("l_", "w_") for a in "xyz"]
        cols += [f"{k}{a}_d" for k in ("l_", "w_") for a in "xyz"]
        cols += [f"sdot_{j}" for j in self.joint_names] + [f"sdot_{j}_d" for j in self.joint_names]
        cols += [f"T_{t}" for t in self.thruster_names]
        cols += ["qp_ok", "qp_active", "l_residual", "w_residual"]
        cols += [f"p_B_{a}" for a in "xyz"] + [f"quat_B_{a}" for a in "xyzw"]
        cols += [f"s_{j}" for j in self.joint_names]
        cols += [f"nu_{i}" for i in range(self.nu.shape[1])]
        cols += [f"p_G_{a}" for a in "xyz"] + [f"p_G_{a}_d" for a in "xyz"]
        return cols

    def to_frame(self) -> pd.DataFrame:
        data = np.hstack([
            self.time[:, None], self.h, self.h_d, self.sdot, self.sdot_d, self.T,
            self.qp_ok[:, None].astype(float), self.qp_active[:, None].astype(float),
            self.l_residual[:, None], self.w_residual[:, None],
            self.p_B, self.quat_B, self.s, self.nu, self.p_G, self.p_G_d,
        ])
        frame = pd.DataFrame(data, columns=self.columns())
        frame["qp_ok"] = frame["qp_ok"].astype(bool)
        frame["qp_active"] = frame["qp_active"].astype(int)
        return frame


@dataclass
class FlightResult:
    success: bool
    cause: str
    log: Optional[SimLog] = None
    steps: int = 0
    qp_failed: bool = False
    initial_state: Optional[RobotState] = field(default=None, repr=False)


class _Recorder:
    def __init__(self, model: RobotModel, n_t: int):
        self.n_t, n, n_p = n_t, model.n, model.n_p
        self.rows = 0
        self.time = np.zeros(n_t)
        self.h, self.h_d = np.zeros((n_t, 6)), np.zeros((n_t, 6))
        self.sdot, self.sdot_d = np.zeros((n_t, n)), np.zeros((n_t, n))
        self.T = np.zeros((n_t, n_p))
        self.qp_ok = np.zeros(n_t, dtype=bool)
        self.qp_active = np.zeros(n_t, dtype=int)
        self.l_residual, self.w_residual = np.zeros(n_t), np.zeros(n_t)
        self.p_B, self.quat_B = np.zeros((n_t, 3)), np.zeros((n_t, 4))
        self.s, self.nu = np.zeros((n_t, n)), np.zeros((n_t, 6 + n))
        self.p_G, self.p_G_d = np.zeros((n_t, 3)), np.zeros((n_t, 3))

    def record(self, state: RobotState, reference, result, p_G, sdot):
        i = self.rows
        self.time[i] = state.t
        self.h[i] = np.concatenate([result.l_error + reference.l_d, result.w_error + reference.w_d])
        self.h_d[i] = np.concatenate([reference.l_d, reference.w_d])
        self.sdot[i] = sdot
        self.sdot_d[i] = result.sdot_star
        self.T[i] = state.T
        self.qp_ok[i] = result.success
        self.qp_active[i] = result.active
        self.l_residual[i], self.w_residual[i] = result.l_residual, result.w_residual
        self.p_B[i] = state.p_B
        self.quat_B[i] = Rotation.from_matrix(state.R_B).as_quat()
        self.s[i], self.nu[i] = state.s, state.nu
        self.p_G[i], self.p_G_d[i] = p_G, reference.position_d
        self.rows += 1

    def finish(self, model: RobotModel, dt: float, failed: bool, cause: str) -> SimLog:
        k = self.rows
        groups = {g: model.group_indices(g) for g in ("torso", "arms")}
        return SimLog(
            dt, [j.name for j in model.revolute], [t.name for t in model.thrusters], groups,
            self.time[:k], self.h[:k], self.h_d[:k], self.sdot[:k], self.sdot_d[:k], self.T[:k],
            self.qp_ok[:k], self.qp_active[:k], self.l_residual[:k], self.w_residual[:k],
            self.p_B[:k], self.quat_B[:k], self.s[:k], self.nu[:k], self.p_G[:k], self.p_G_d[:k],
            failed, cause,
        )


def run_flight(model: RobotModel, gains: ControllerGains, trajectory, dt: float = DEFAULT_DT,
               initial: Optional[RobotState] = None, u_max_override: Optional[float] = None,
               max_position_error: float = DEFAULT_MAX_POSITION_ERROR,
               library: Optional[dict] = None) -> FlightResult:
    """Fly one envelope from hover. Failures are reported in the result, never raised.

    Without an initial state the robot is trimmed to hover near ``gains.s_ref``
    and the postural reference is moved to the trimmed posture.
    """
    if initial is None:
        try:
            initial = find_hover(model, gains.s_ref)
        except ModelError as e:
            return FlightResult(False, f"hover trim: {e}")
        gains = replace(gains, s_ref=initial.s.copy())

    kin = forward_kinematics(model, initial)
    inertia_body = initial.R_B.T @ locked_inertia(kin) @ initial.R_B
    reference = make_trajectory(trajectory, kin.mass, inertia_body, kin.p_G, initial.R_B, library)
    n_t = reference.spec.n_steps(dt)
    controller = Controller(model, gains, dt, u_max_override)
    recorder = _Recorder(model, n_t)

    state = initial.copy()
    failed, cause, qp_failed = False, "", False
    for i in range(n_t):
        state.t = i * dt
        ref = reference(state.t)
        p_G = forward_kinematics(model, state).p_G
        result = controller(state, ref)
        # Joint rates as the plant applies them after joint-limit saturation
        _, applied = saturate_command(model, state, result.u[:model.n_p], result.u[model.n_p:], dt)
        recorder.record(state, ref, result, p_G, applied)
        if not result.success:
            failed, qp_failed = True, True
            cause = f"QP failure at t = {state.t:.2f} s ({result.cause})"
            break
        if np.linalg.norm(p_G) > DIVERGENCE_RADIUS:
            failed, cause = True, f"divergence at t = {state.t:.2f} s (|p_G| > {DIVERGENCE_RADIUS:g} m)"
            break
        if np.linalg.norm(p_G - ref.position_d) > max_position_error:
            failed, cause = True, f"tracking lost at t = {state.t:.2f} s"
            break
        try:
            state = step(model, state, result.u, dt)
        except DivergenceError as e:
            failed, cause = True, f"divergence: {e}"
            break

    log = recorder.finish(model, dt, failed, cause)
    return FlightResult(not failed, cause, log, recorder.rows, qp_failed, initial)


def compute_fitness(log: SimLog, sum_of_squares: bool = False) -> FitnessVector:
    """Tracking and thrust objectives of a successful flight.

    As typeset, delta_h and delta_sdot are norms of the summed error, so
    errors of opposite sign cancel. ``sum_of_squares`` sums squared
    per-sample norms instead.
    """
    if log.failed:
        raise ValueError(f"Fitness of a failed flight is undefined ({log.cause})")
    if log.n_t == 0:
        raise ValueError("Empty flight log")
    l_err = log.h[:, :3] - log.h_d[:, :3]
    w_err = log.h[:, 3:] - log.h_d[:, 3:]
    s_err = log.sdot - log.sdot_d
    torso = s_err[:, log.groups.get("torso", [])]
    arms = s_err[:, log.groups.get("arms", [])]

    if sum_of_squares:
        delta_h = float((l_err ** 2).sum() + (w_err ** 2).sum())
        delta_sdot = float(2.0 * (torso ** 2).sum() + (arms ** 2).sum())
    else:
        delta_h = float(np.sum(l_err.sum(axis=0) ** 2) + np.sum(w_err.sum(axis=0) ** 2))
        delta_sdot = float(2.0 * np.sum(torso.sum(axis=0) ** 2) + np.sum(arms.sum(axis=0) ** 2))
    delta_T = float(log.T.sum(axis=1).sum() / log.n_t)
    return FitnessVector(delta_h, delta_sdot, delta_T)


def write_log_csv(log: SimLog, path: Path, header: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(header)
        log.to_frame().to_csv(f, index=False, float_format="%.10g")
    return path
