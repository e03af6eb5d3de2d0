"""Flight envelopes: scripted action sequences turned into momentum references.

Each segment moves the CoM by a displacement and the base yaw by an angle
along a minimum-jerk profile, so position, velocity and acceleration are
continuous across segment boundaries.
"""

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .controller import ReferenceSample

FLIGHT_DURATION = 42.0

# Unit direction of each translational action (x forward, z up)
ACTION_DIRECTIONS = {
    "takeoff": (0.0, 0.0, 1.0),
    "move-forward": (1.0, 0.0, 0.0),
    "move-backward": (-1.0, 0.0, 0.0),
    "move-down": (0.0, 0.0, -1.0),
    "yaw-cw": (0.0, 0.0, 0.0),
    "yaw-ccw": (0.0, 0.0, 0.0),
    "hover": (0.0, 0.0, 0.0),
    "combined": (0.0, 0.0, 0.0),
}


def _seg(action, duration, distance=0.0, yaw_deg=0.0, **extra):
    return {"action": action, "duration": duration, "distance": distance, "yaw_deg": yaw_deg, **extra}


# Shipped envelopes (m, deg, s). Yaw is counter-clockwise positive seen from above.
DEFAULT_ENVELOPES = {
    "traj1": [
        _seg("takeoff", 10, 1.0), _seg("move-forward", 8, 1.0), _seg("move-down", 8, 0.5),
        _seg("move-backward", 8, 1.0), _seg("move-down", 8, 0.5),
    ],
    "traj2": [
        _seg("takeoff", 10, 1.0, -90), _seg("move-forward", 8, 1.0), _seg("yaw-ccw", 8, yaw_deg=90),
        _seg("move-backward", 8, 1.0), _seg("move-down", 8, 0.5, 45),
    ],
    "traj3": [
        _seg("takeoff", 10, 1.0), _seg("move-backward", 8, 1.0), _seg("move-down", 6, 0.5),
        _seg("move-forward", 10, 1.0), _seg("move-down", 8, 0.5),
    ],
    "traj4": [
        _seg("takeoff", 10, 1.0, 90), _seg("move-backward", 6, 1.0), _seg("yaw-cw", 10, yaw_deg=90),
        _seg("move-forward", 8, 1.0), _seg("move-down", 8, 0.5, -45),
    ],
    "traj5": [
        _seg("takeoff", 8, 1.0), _seg("yaw-cw", 6, yaw_deg=90), _seg("move-forward", 10, 1.0),
        _seg("yaw-ccw", 8, yaw_deg=90), _seg("move-down", 10, 0.5),
    ],
    "optim": [
        _seg("takeoff", 10, 1.0), _seg("move-forward", 10, 1.0), _seg("move-down", 10, 0.5),
        _seg("yaw-cw", 12, yaw_deg=90),
    ],
    "hover": [_seg("hover", 42)],
}


class TrajectoryError(ValueError):
    """Invalid flight envelope."""


@dataclass(frozen=True)
class Segment:
    action: str
    displacement: tuple
    yaw: float
    duration: float

    @classmethod
    def from_dict(cls, data: dict) -> "Segment":
        action = data.get("action")
        if action not in ACTION_DIRECTIONS:
            raise TrajectoryError(f"Unknown action '{action}'")
        duration = float(data.get("duration", 0.0))
        if not duration > 0 or not np.isfinite(duration):
            raise TrajectoryError(f"Segment '{action}' needs a positive duration")
        if action == "combined":
            displacement = np.asarray(data.get("displacement", (0.0, 0.0, 0.0)), dtype=float)
        else:
            displacement = float(data.get("distance", 0.0)) * np.array(ACTION_DIRECTIONS[action])
        yaw = np.radians(float(data.get("yaw_deg", 0.0)))
        if action == "yaw-cw":
            yaw = -abs(yaw)
        elif action == "yaw-ccw":
            yaw = abs(yaw)
        if displacement.shape != (3,) or not np.all(np.isfinite(displacement)) or not np.isfinite(yaw):
            raise TrajectoryError(f"Segment '{action}' has a bad displacement or yaw")
        return cls(action, tuple(float(v) for v in displacement), float(yaw), duration)


@dataclass(frozen=True)
class TrajectorySpec:
    name: str
    segments: tuple

    @property
    def duration(self) -> float:
        return float(sum(seg.duration for seg in self.segments))

    @property
    def actions(self) -> list[str]:
        return [seg.action for seg in self.segments]

    def n_steps(self, dt: float) -> int:
        return int(round(self.duration / dt))

    @classmethod
    def from_segments(cls, name: str, segments: list) -> "TrajectorySpec":
        if not segments:
            raise TrajectoryError(f"Trajectory '{name}' has no segments")
        return cls(name, tuple(seg if isinstance(seg, Segment) else Segment.from_dict(seg) for seg in segments))


def minimum_jerk(tau: float) -> tuple[float, float, float, float]:
    """Normalized profile and its first three derivatives with respect to tau."""
    tau = min(max(tau, 0.0), 1.0)
    t2, t3 = tau * tau, tau * tau * tau
    return (
        10 * t3 - 15 * t3 * tau + 6 * t3 * t2,
        30 * t2 - 60 * t3 + 30 * t2 * t2,
        60 * tau - 180 * t2 + 120 * t3,
        60 - 360 * tau + 360 * t2,
    )


def envelope_library(overrides: Optional[dict] = None) -> dict:
    library = {name: list(segments) for name, segments in DEFAULT_ENVELOPES.items()}
    for name, value in (overrides or {}).items():
        library[name] = list(value["segments"] if isinstance(value, dict) else value)
    return library


def get_spec(name_or_spec: Union[str, TrajectorySpec, list], library: Optional[dict] = None) -> TrajectorySpec:
    if isinstance(name_or_spec, TrajectorySpec):
        return name_or_spec
    if isinstance(name_or_spec, str):
        library = library if library is not None else envelope_library()
        if name_or_spec not in library:
            raise TrajectoryError(f"Unknown trajectory '{name_or_spec}'")
        return TrajectorySpec.from_segments(name_or_spec, library[name_or_spec])
    return TrajectorySpec.from_segments("custom", list(name_or_spec))


@dataclass
class Trajectory:
    """Reference generator for one robot: l_d = m x_dot_d, w_d = I_B psi_dot e3."""
    spec: TrajectorySpec
    mass: float
    inertia_body: np.ndarray = field(default_factory=lambda: np.eye(3))
    start: np.ndarray = field(default_factory=lambda: np.zeros(3))
    R0: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        self._starts = np.concatenate([[0.0], np.cumsum([s.duration for s in self.spec.segments])])
        offsets, yaw = [np.zeros(3)], [0.0]
        for seg in self.spec.segments:
            offsets.append(offsets[-1] + np.array(seg.displacement))
            yaw.append(yaw[-1] + seg.yaw)
        self._offsets = offsets
        self._yaws = yaw

    @property
    def duration(self) -> float:
        return self.spec.duration

    def _segment(self, t: float) -> int:
        i = int(np.searchsorted(self._starts, t, side="right")) - 1
        return min(max(i, 0), len(self.spec.segments) - 1)

    def kinematic(self, t: float) -> tuple:
        """Position, velocity, acceleration, jerk and yaw with its three rates at t."""
        i = self._segment(t)
        seg = self.spec.segments[i]
        D = seg.duration
        s, ds, dds, ddds = minimum_jerk((t - self._starts[i]) / D)
        delta = np.array(seg.displacement)
        position = self.start + self._offsets[i] + delta * s
        yaw = self._yaws[i] + seg.yaw * s
        rates = (ds / D, dds / D ** 2, ddds / D ** 3)
        return (position, delta * rates[0], delta * rates[1], delta * rates[2],
                yaw, seg.yaw * rates[0], seg.yaw * rates[1], seg.yaw * rates[2])

    def __call__(self, t: float) -> ReferenceSample:
        position, vel, acc, jerk, yaw, yaw_rate, yaw_acc, yaw_jerk = self.kinematic(t)
        axis = self.inertia_body @ np.array([0.0, 0.0, 1.0])
        return ReferenceSample(
            t=t,
            l_d=self.mass * vel,
            l_dot_d=self.mass * acc,
            l_ddot_d=self.mass * jerk,
            R_d=Rotation.from_rotvec([0.0, 0.0, yaw]).as_matrix() @ self.R0,
            w_d=axis * yaw_rate,
            w_dot_d=axis * yaw_acc,
            w_ddot_d=axis * yaw_jerk,
            position_d=position,
        )


def make_trajectory(name_or_spec, mass: float, inertia_body: Optional[np.ndarray] = None,
                    start: Optional[np.ndarray] = None, R0: Optional[np.ndarray] = None,
                    library: Optional[dict] = None) -> Trajectory:
    spec = get_spec(name_or_spec, library)
    return Trajectory(
        spec, float(mass),
        np.eye(3) if inertia_body is None else np.asarray(inertia_body, dtype=float),
        np.zeros(3) if start is None else np.asarray(start, dtype=float),
        np.eye(3) if R0 is None else np.asarray(R0, dtype=float),
    )
