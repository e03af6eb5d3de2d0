"""Parametric jet-interface solids: design grid, bracket builder and mass properties.

The two interfaces that hold the jets (jetpack bracket and forearm support)
are built procedurally from the design vector. Integers in degrees and
millimeters cross the module boundary; everything inside is SI.

Part frame (left-side part): x fore-aft, y lateral (outward), z up. The mount
face is the plane z = 0 and the bracket hangs below it. The right-side part
is the mirror image through the plane y = 0.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

# Design grid: name -> (min, max, step), in degrees or millimeters
PARAM_GRID = {
    "angle": (1, 79, 1),
    "distance": (40, 100, 2),
    "offset": (80, 120, 2),
    "length": (50, 150, 2),
}
PARAM_NAMES = tuple(PARAM_GRID)

PARTS = ("jetpack-bracket", "forearm-support")

# ERGAL / 7075 aluminum handbook density
DEFAULT_DENSITY = 2810.0

DEFAULT_MAPPING = {
    "jetpack-bracket": ["angle", "distance"],
    "forearm-support": ["offset", "length"],
}

# Values a part uses for parameters it does not own (deg / mm) and the fixed
# section sizes of its primitives (m).
DEFAULT_TEMPLATES = {
    "jetpack-bracket": {
        "angle": 15, "distance": 42, "offset": 40, "length": 50,
        "mount_width": 0.05, "mount_thickness": 0.01,
        "column_width": 0.03, "arm_width": 0.03, "arm_height": 0.03,
        "plate_thickness": 0.012,
        "seat_depth_base": 0.06, "seat_depth_per_distance": 0.5,
        "seat_width_base": 0.04, "seat_width_per_length": 0.2,
    },
    "forearm-support": {
        "angle": 0, "distance": 50, "offset": 80, "length": 108,
        "mount_width": 0.05, "mount_thickness": 0.01,
        "column_width": 0.03, "arm_width": 0.03, "arm_height": 0.03,
        "plate_thickness": 0.012,
        "seat_depth_base": 0.06, "seat_depth_per_distance": 0.5,
        "seat_width_base": 0.04, "seat_width_per_length": 0.2,
    },
}


class GeometryError(ValueError):
    """Invalid design vector or degenerate solid."""


@dataclass(frozen=True, order=True)
class GeometryParams:
    """Design vector θ on the integer grid (degrees, millimeters)."""
    angle: int
    distance: int
    offset: int
    length: int

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.angle, self.distance, self.offset, self.length)

    def as_dict(self) -> dict:
        return dict(zip(PARAM_NAMES, self.as_tuple()))

    @classmethod
    def from_sequence(cls, values) -> "GeometryParams":
        values = list(values)
        if len(values) != 4:
            raise GeometryError(f"Design vector needs 4 values, got {len(values)}")
        return cls(*(int(v) for v in values))

    def __str__(self) -> str:
        return "({}, {}, {}, {})".format(*self.as_tuple())


BASELINE = GeometryParams(15, 42, 80, 108)

# Designs selected for validation (original plus four Pareto picks)
DESIGN_LIBRARY = {
    "original": BASELINE,
    "optim1": GeometryParams(1, 47, 88, 50),
    "optim2": GeometryParams(2, 40, 94, 50),
    "optim3": GeometryParams(1, 48, 100, 130),
    "optim4": GeometryParams(8, 96, 100, 146),
}


def validate_params(theta: GeometryParams, on_grid: bool = True) -> list[str]:
    """Return every violated bound or step rule. An empty list means valid."""
    violations = []
    for name, (lo, hi, step) in PARAM_GRID.items():
        value = getattr(theta, name)
        if not isinstance(value, (int, np.integer)):
            violations.append(f"{name}={value!r} is not an integer")
            continue
        if value < lo:
            violations.append(f"{name}={value} below min {lo}")
        elif value > hi:
            violations.append(f"{name}={value} above max {hi}")
        if on_grid and (value - lo) % step != 0:
            violations.append(f"{name}={value} off the step-{step} grid from {lo}")
    return violations


def require_valid(theta: GeometryParams, on_grid: bool = True):
    violations = validate_params(theta, on_grid)
    if violations:
        raise GeometryError(f"Invalid design {theta}: " + "; ".join(violations))


def snap_params(values) -> GeometryParams:
    """Clamp real-valued candidates to the bounds and round them onto the grid."""
    snapped = []
    for value, (lo, hi, step) in zip(values, PARAM_GRID.values()):
        k = round((float(np.clip(value, lo, hi)) - lo) / step)
        k = int(np.clip(k, 0, (hi - lo) // step))
        snapped.append(lo + k * step)
    return GeometryParams(*snapped)


@dataclass(frozen=True)
class Primitive:
    """Box with edge lengths `dims`, posed by a rotation and a centre in the part frame."""
    dims: tuple
    center: tuple
    rotation: tuple = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0), (0.0, 0.0, 1.0))

    @property
    def R(self) -> np.ndarray:
        return np.array(self.rotation, dtype=float)

    @property
    def c(self) -> np.ndarray:
        return np.array(self.center, dtype=float)

    def volume(self) -> float:
        return float(np.prod(self.dims))

    def half_extents(self) -> np.ndarray:
        return 0.5 * np.array(self.dims, dtype=float)

    def contains(self, points: np.ndarray) -> np.ndarray:
        local = (np.asarray(points, dtype=float) - self.c) @ self.R
        return np.all(np.abs(local) <= self.half_extents() + 1e-12, axis=1)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Axis-aligned bounding box in the part frame."""
        reach = np.abs(self.R) @ self.half_extents()
        return self.c - reach, self.c + reach

    def smallest_dimension(self) -> float:
        return float(min(self.dims))


@dataclass(frozen=True)
class Face:
    """A planar face of one primitive: outward normal, centre and area."""
    primitive: int
    center: tuple
    normal: tuple
    area: float


@dataclass(frozen=True)
class Solid:
    """Composite of non-overlapping primitives with a mounting and a loaded face."""
    primitives: tuple
    density: float
    fixed_face: Optional[Face] = None
    loaded_face: Optional[Face] = None
    part: str = ""

    def volume(self) -> float:
        return sum(p.volume() for p in self.primitives)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lows, highs = zip(*(p.bounds() for p in self.primitives))
        return np.min(lows, axis=0), np.max(highs, axis=0)

    def smallest_dimension(self) -> float:
        return min(p.smallest_dimension() for p in self.primitives)

    def contains(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        inside = np.zeros(len(points), dtype=bool)
        for primitive in self.primitives:
            inside |= primitive.contains(points)
        return inside


@dataclass(frozen=True)
class MassProperties:
    mass: float
    com: np.ndarray = field(compare=False)
    inertia: np.ndarray = field(compare=False)

    def check(self, tol: float = 1e-12) -> list[str]:
        """Physical-consistency problems, empty when the inertia is admissible."""
        problems = []
        if not self.mass > 0:
            problems.append(f"mass {self.mass} not positive")
        if not np.allclose(self.inertia, self.inertia.T, atol=tol * max(1.0, np.abs(self.inertia).max())):
            problems.append("inertia not symmetric")
        moments = np.linalg.eigvalsh(0.5 * (self.inertia + self.inertia.T))
        if moments.min() <= 0:
            problems.append("inertia not positive definite")
        a, b, c = moments
        slack = tol * max(1.0, c)
        if a + b < c - slack:
            problems.append("principal moments violate the triangle inequality")
        return problems

    def mirrored(self) -> "MassProperties":
        """Mirror image through the plane y = 0."""
        flip = np.diag([1.0, -1.0, 1.0])
        return MassProperties(self.mass, flip @ self.com, flip @ self.inertia @ flip)


@dataclass(frozen=True)
class JetMountFrame:
    """Jet seat pose in the parent-link (part) frame."""
    position: np.ndarray = field(compare=False)
    axis: np.ndarray = field(compare=False)
    contact_area: float
    standoff: float = 0.0
    tilt_deg: float = 0.0

    def mirrored(self) -> "JetMountFrame":
        flip = np.array([1.0, -1.0, 1.0])
        return JetMountFrame(self.position * flip, self.axis * flip,
                             self.contact_area, self.standoff, self.tilt_deg)


@dataclass
class GeometryConfig:
    density: float = DEFAULT_DENSITY
    mapping: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_MAPPING.items()})
    templates: dict = field(default_factory=lambda: {k: dict(v) for k, v in DEFAULT_TEMPLATES.items()})
    plate_thickness_override: Optional[float] = None

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "GeometryConfig":
        data = data or {}
        config = cls()
        config.density = float(data.get("density", config.density))
        for part, names in data.get("mapping", {}).items():
            config.mapping[part] = list(names)
        for part, values in data.get("templates", {}).items():
            config.templates.setdefault(part, {}).update(values)
        override = data.get("plate_thickness_override")
        config.plate_thickness_override = None if override is None else float(override)
        return config

    def effective(self, theta: GeometryParams, part: str) -> dict:
        """Parameters a part is built from: its own θ entries, template values elsewhere."""
        if part not in self.templates:
            raise GeometryError(f"Unknown part '{part}'")
        template = dict(self.templates[part])
        owned = self.mapping.get(part, [])
        for name in PARAM_NAMES:
            if name in owned:
                template[name] = getattr(theta, name)
        if self.plate_thickness_override is not None:
            template["plate_thickness"] = self.plate_thickness_override
        return template


def _box(dims, center, rotation=None) -> Primitive:
    if min(dims) <= 0:
        raise GeometryError(f"Degenerate box {dims}")
    rot = np.eye(3) if rotation is None else np.asarray(rotation)
    return Primitive(tuple(float(d) for d in dims), tuple(float(c) for c in center),
                     tuple(tuple(float(v) for v in row) for row in rot))


def build_bracket(theta: GeometryParams, part: str,
                  config: Optional[GeometryConfig] = None) -> Solid:
    """Build the left-side solid of a jet interface from the design vector."""
    require_valid(theta, on_grid=False)
    config = config or GeometryConfig()
    p = config.effective(theta, part)

    angle = np.radians(p["angle"])
    distance = p["distance"] * 1e-3
    offset = p["offset"] * 1e-3
    length = p["length"] * 1e-3
    t_mount = p["mount_thickness"]
    w_mount = p["mount_width"]
    w_col = p["column_width"]
    w_arm, h_arm = p["arm_width"], p["arm_height"]
    t_plate = p["plate_thickness"]
    seat_depth = p["seat_depth_base"] + p["seat_depth_per_distance"] * distance
    seat_width = p["seat_width_base"] + p["seat_width_per_length"] * length

    if distance < t_mount + h_arm:
        raise GeometryError(f"Standoff {distance} m too short for the arm section")

    mount = _box((w_mount, w_mount, t_mount), (0.0, offset, -0.5 * t_mount))
    column = _box((w_col, w_col, distance - t_mount),
                  (0.0, offset, -0.5 * (distance + t_mount)))
    arm_start = offset + 0.5 * w_col
    arm = _box((w_arm, length, h_arm),
               (0.0, arm_start + 0.5 * length, -distance + 0.5 * h_arm))

    # Plate bonded to the arm's end face; tilting about y keeps that face in place
    tilt = Rotation.from_rotvec([0.0, angle, 0.0]).as_matrix()
    plate_center = np.array([0.0, arm_start + length + 0.5 * seat_width, -distance + 0.5 * h_arm])
    plate = _box((seat_depth, seat_width, t_plate), plate_center, tilt)

    jet_axis = tilt @ np.array([0.0, 0.0, 1.0])
    seat_center = plate_center - 0.5 * t_plate * jet_axis
    seat = Face(3, tuple(seat_center), tuple(-jet_axis), float(seat_depth * seat_width))
    mount_face = Face(0, (0.0, offset, 0.0), (0.0, 0.0, 1.0), float(w_mount * w_mount))

    return Solid(
        primitives=(mount, column, arm, plate),
        density=config.density,
        fixed_face=mount_face,
        loaded_face=seat,
        part=part,
    )


def _primitive_inertia(primitive: Primitive, mass: float) -> np.ndarray:
    a, b, c = primitive.dims
    local = np.diag([b * b + c * c, a * a + c * c, a * a + b * b]) * mass / 12.0
    R = primitive.R
    return R @ local @ R.T


def mass_properties(solid: Solid) -> MassProperties:
    """Exact composite mass, centre of mass and inertia about the CoM."""
    masses, centers, inertias = [], [], []
    for primitive in solid.primitives:
        if min(primitive.dims) <= 0:
            raise GeometryError(f"Degenerate primitive {primitive.dims}")
        m = solid.density * primitive.volume()
        masses.append(m)
        centers.append(primitive.c)
        inertias.append(_primitive_inertia(primitive, m))

    total = float(sum(masses))
    com = sum(m * c for m, c in zip(masses, centers)) / total
    inertia = np.zeros((3, 3))
    for m, c, I in zip(masses, centers, inertias):
        d = c - com
        inertia += I + m * (d @ d * np.eye(3) - np.outer(d, d))
    return MassProperties(total, com, 0.5 * (inertia + inertia.T))


def jet_mount_frame(theta: GeometryParams, part: str,
                    config: Optional[GeometryConfig] = None) -> JetMountFrame:
    solid = build_bracket(theta, part, config)
    config = config or GeometryConfig()
    p = config.effective(theta, part)
    seat = solid.loaded_face
    return JetMountFrame(
        position=np.array(seat.center),
        axis=-np.array(seat.normal),
        contact_area=seat.area,
        standoff=p["distance"] * 1e-3,
        tilt_deg=float(p["angle"]),
    )


def export_stl(solid: Solid, path: Path) -> Path:
    """Write the solid as a binary STL in meters."""
    import trimesh

    meshes = []
    for primitive in solid.primitives:
        transform = np.eye(4)
        transform[:3, :3] = primitive.R
        transform[:3, 3] = primitive.c
        meshes.append(trimesh.creation.box(extents=primitive.dims, transform=transform))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    trimesh.util.concatenate(meshes).export(str(path), file_type="stl")
    return path
