"""Floating-base robot description: URDF-subset reader and writer.

Thrusters are stored as a vendor extension element::

    <thruster name="jet_l_arm" parent="l_forearm_support" xyz="..." axis="..."
              area="..." tilt_deg="..." tmin="0" tmax="250" tdotmin="-25" tdotmax="25"/>

Links that are jet interfaces carry ``<interface part="forearm-support" side="left"/>``
and revolute joints may carry ``<group name="arms"/>`` for fitness grouping.
"""

import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from .geometry import (
    GeometryConfig,
    GeometryParams,
    MassProperties,
    build_bracket,
    jet_mount_frame,
    mass_properties,
    require_valid,
)

DEFAULT_GRAVITY = -9.81
AXIS_TOLERANCE = 1e-6


class ModelError(ValueError):
    """Malformed or physically inconsistent robot model."""


@dataclass
class Link:
    name: str
    mass: float
    com: np.ndarray
    inertia: np.ndarray
    interface: Optional[str] = None
    side: str = "left"


@dataclass
class Joint:
    name: str
    type: str
    parent: str
    child: str
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    axis: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    lower: float = -np.inf
    upper: float = np.inf
    velocity: float = np.inf
    group: str = ""

    @cached_property
    def origin_rotation(self) -> np.ndarray:
        return Rotation.from_euler("xyz", self.origin_rpy).as_matrix()


@dataclass
class Thruster:
    name: str
    parent: str
    position: np.ndarray
    axis: np.ndarray
    t_min: float = 0.0
    t_max: float = 250.0
    tdot_min: float = -25.0
    tdot_max: float = 25.0
    contact_area: float = 0.0
    tilt_deg: float = 0.0


@dataclass
class RobotModel:
    name: str
    links: dict
    joints: list
    thrusters: list
    gravity: float = DEFAULT_GRAVITY
    root: str = ""
    design: Optional[GeometryParams] = None

    def __post_init__(self):
        self._order()

    def _order(self):
        """Sort joints parent-first and cache index maps."""
        children = {j.child for j in self.joints}
        roots = [name for name in self.links if name not in children]
        if len(roots) != 1:
            raise ModelError(f"Model must have exactly one root link, found {roots}")
        self.root = roots[0]
        seen_children = set()
        for joint in self.joints:
            if joint.child in seen_children:
                raise ModelError(f"Link '{joint.child}' has more than one parent joint")
            seen_children.add(joint.child)
            for end in (joint.parent, joint.child):
                if end not in self.links:
                    raise ModelError(f"Joint '{joint.name}' references unknown link '{end}'")

        ordered, frontier = [], [self.root]
        by_parent = {}
        for joint in self.joints:
            by_parent.setdefault(joint.parent, []).append(joint)
        while frontier:
            link = frontier.pop(0)
            for joint in by_parent.get(link, []):
                ordered.append(joint)
                frontier.append(joint.child)
        if len(ordered) != len(self.joints):
            raise ModelError("Joint graph is not a tree rooted at the base link")
        self.joints = ordered
        self.link_names = [self.root] + [j.child for j in ordered]
        self.revolute = [j for j in self.joints if j.type == "revolute"]
        self.joint_index = {j.name: i for i, j in enumerate(self.revolute)}

    @property
    def n(self) -> int:
        return len(self.revolute)

    @property
    def n_p(self) -> int:
        return len(self.thrusters)

    @property
    def total_mass(self) -> float:
        return float(sum(link.mass for link in self.links.values()))

    def joint_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([j.lower for j in self.revolute]),
                np.array([j.upper for j in self.revolute]))

    def velocity_limits(self) -> np.ndarray:
        return np.array([j.velocity for j in self.revolute])

    def thrust_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([t.t_min for t in self.thrusters]),
                np.array([t.t_max for t in self.thrusters]))

    def thrust_rate_limits(self) -> tuple[np.ndarray, np.ndarray]:
        return (np.array([t.tdot_min for t in self.thrusters]),
                np.array([t.tdot_max for t in self.thrusters]))

    def group_indices(self, group: str) -> list[int]:
        return [i for i, j in enumerate(self.revolute) if j.group == group]


def _floats(text: Optional[str], count: int, what: str) -> np.ndarray:
    if text is None:
        raise ModelError(f"Missing {what}")
    try:
        values = np.array([float(v) for v in text.split()])
    except ValueError as e:
        raise ModelError(f"Bad number in {what}: {text!r}") from e
    if len(values) != count:
        raise ModelError(f"{what} needs {count} values, got {len(values)}")
    return values


def _unit(vector: np.ndarray, what: str) -> np.ndarray:
    norm = np.linalg.norm(vector)
    if abs(norm - 1.0) > AXIS_TOLERANCE:
        raise ModelError(f"{what} is not unit-norm (|a| = {norm:.6g})")
    return vector


def _parse_link(element) -> Link:
    name = element.get("name")
    inertial = element.find("inertial")
    if inertial is None:
        raise ModelError(f"Link '{name}' has no inertial data")
    mass_el, inertia_el = inertial.find("mass"), inertial.find("inertia")
    if mass_el is None or inertia_el is None:
        raise ModelError(f"Link '{name}' has incomplete inertial data")
    origin = inertial.find("origin")
    com = _floats(origin.get("xyz", "0 0 0") if origin is not None else "0 0 0", 3, f"{name} com")
    mass = float(mass_el.get("value"))
    if not mass > 0:
        raise ModelError(f"Link '{name}' mass must be positive")
    try:
        ixx, ixy, ixz, iyy, iyz, izz = (float(inertia_el.get(k)) for k in
                                        ("ixx", "ixy", "ixz", "iyy", "iyz", "izz"))
    except TypeError as e:
        raise ModelError(f"Link '{name}' inertia is incomplete") from e
    inertia = np.array([[ixx, ixy, ixz], [ixy, iyy, iyz], [ixz, iyz, izz]])
    interface = element.find("interface")
    return Link(
        name=name, mass=mass, com=com, inertia=inertia,
        interface=interface.get("part") if interface is not None else None,
        side=interface.get("side", "left") if interface is not None else "left",
    )


def _parse_joint(element) -> Joint:
    name = element.get("name")
    kind = element.get("type")
    if kind not in ("revolute", "fixed"):
        raise ModelError(f"Joint '{name}' has unsupported type '{kind}'")
    parent, child = element.find("parent"), element.find("child")
    if parent is None or child is None:
        raise ModelError(f"Joint '{name}' needs parent and child")
    origin = element.find("origin")
    xyz = _floats(origin.get("xyz", "0 0 0") if origin is not None else "0 0 0", 3, f"{name} origin")
    rpy = _floats(origin.get("rpy", "0 0 0") if origin is not None else "0 0 0", 3, f"{name} origin")
    joint = Joint(name, kind, parent.get("link"), child.get("link"), xyz, rpy)
    if kind == "revolute":
        axis = element.find("axis")
        joint.axis = _unit(_floats(axis.get("xyz") if axis is not None else None, 3, f"{name} axis"),
                           f"Joint '{name}' axis")
        limit = element.find("limit")
        if limit is None:
            raise ModelError(f"Revolute joint '{name}' needs limits")
        joint.lower = float(limit.get("lower"))
        joint.upper = float(limit.get("upper"))
        joint.velocity = float(limit.get("velocity"))
        group = element.find("group")
        joint.group = group.get("name", "") if group is not None else ""
    return joint


def _parse_thruster(element) -> Thruster:
    name = element.get("name")
    return Thruster(
        name=name,
        parent=element.get("parent"),
        position=_floats(element.get("xyz"), 3, f"thruster {name} xyz"),
        axis=_unit(_floats(element.get("axis"), 3, f"thruster {name} axis"), f"Thruster '{name}' axis"),
        t_min=float(element.get("tmin", 0.0)),
        t_max=float(element.get("tmax", 250.0)),
        tdot_min=float(element.get("tdotmin", -25.0)),
        tdot_max=float(element.get("tdotmax", 25.0)),
        contact_area=float(element.get("area", 0.0)),
        tilt_deg=float(element.get("tilt_deg", 0.0)),
    )


def load_model(path) -> RobotModel:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Model file not found: {path}")
    try:
        root = ET.parse(path).getroot()
    except ET.ParseError as e:
        raise ModelError(f"Malformed XML in {path}: {e}") from e
    if root.tag != "robot":
        raise ModelError(f"{path}: top-level element must be <robot>")

    links = {}
    for element in root.findall("link"):
        link = _parse_link(element)
        if link.name in links:
            raise ModelError(f"Duplicate link '{link.name}'")
        links[link.name] = link
    joints = [_parse_joint(e) for e in root.findall("joint")]
    thrusters = [_parse_thruster(e) for e in root.findall("thruster")]
    for thruster in thrusters:
        if thruster.parent not in links:
            raise ModelError(f"Thruster '{thruster.name}' has unknown parent '{thruster.parent}'")

    gravity_el = root.find("gravity")
    gravity = float(gravity_el.get("value")) if gravity_el is not None else DEFAULT_GRAVITY
    design_el = root.find("codesign")
    design = None
    if design_el is not None:
        design = GeometryParams(*(int(design_el.get(k)) for k in ("angle", "distance", "offset", "length")))

    return RobotModel(root.get("name", path.stem), links, joints, thrusters, gravity, design=design)


def _fmt(values) -> str:
    return " ".join(repr(float(v)) for v in np.atleast_1d(values))


def model_to_xml(model: RobotModel) -> str:
    robot = ET.Element("robot", name=model.name)
    ET.SubElement(robot, "gravity", value=repr(float(model.gravity)))
    if model.design is not None:
        ET.SubElement(robot, "codesign", {k: str(v) for k, v in model.design.as_dict().items()})

    for link in model.links.values():
        el = ET.SubElement(robot, "link", name=link.name)
        if link.interface:
            ET.SubElement(el, "interface", part=link.interface, side=link.side)
        inertial = ET.SubElement(el, "inertial")
        ET.SubElement(inertial, "origin", xyz=_fmt(link.com), rpy="0.0 0.0 0.0")
        ET.SubElement(inertial, "mass", value=repr(float(link.mass)))
        I = link.inertia
        ET.SubElement(inertial, "inertia", ixx=repr(float(I[0, 0])), ixy=repr(float(I[0, 1])),
                      ixz=repr(float(I[0, 2])), iyy=repr(float(I[1, 1])),
                      iyz=repr(float(I[1, 2])), izz=repr(float(I[2, 2])))

    for joint in model.joints:
        el = ET.SubElement(robot, "joint", name=joint.name, type=joint.type)
        ET.SubElement(el, "parent", link=joint.parent)
        ET.SubElement(el, "child", link=joint.child)
        ET.SubElement(el, "origin", xyz=_fmt(joint.origin_xyz), rpy=_fmt(joint.origin_rpy))
        if joint.type == "revolute":
            ET.SubElement(el, "axis", xyz=_fmt(joint.axis))
            ET.SubElement(el, "limit", lower=repr(float(joint.lower)), upper=repr(float(joint.upper)),
                          velocity=repr(float(joint.velocity)), effort="0.0")
            if joint.group:
                ET.SubElement(el, "group", name=joint.group)

    for t in model.thrusters:
        ET.SubElement(robot, "thruster", {
            "name": t.name, "parent": t.parent, "xyz": _fmt(t.position), "axis": _fmt(t.axis),
            "area": repr(float(t.contact_area)), "tilt_deg": repr(float(t.tilt_deg)),
            "tmin": repr(float(t.t_min)), "tmax": repr(float(t.t_max)),
            "tdotmin": repr(float(t.tdot_min)), "tdotmax": repr(float(t.tdot_max)),
        })

    ET.indent(robot, space="  ")
    return ET.tostring(robot, encoding="unicode") + "\n"


def apply_design(model: RobotModel, theta: GeometryParams,
                 geometry: Optional[GeometryConfig] = None) -> RobotModel:
    """Copy of the model with jet-interface inertials and jet frames taken from θ."""
    require_valid(theta, on_grid=False)
    geometry = geometry or GeometryConfig()
    props: dict[tuple, MassProperties] = {}
    frames = {}
    for link in model.links.values():
        if link.interface and link.interface not in {k[0] for k in props}:
            props[(link.interface, "left")] = mass_properties(build_bracket(theta, link.interface, geometry))
            props[(link.interface, "right")] = props[(link.interface, "left")].mirrored()
            frames[(link.interface, "left")] = jet_mount_frame(theta, link.interface, geometry)
            frames[(link.interface, "right")] = frames[(link.interface, "left")].mirrored()

    links = {}
    for name, link in model.links.items():
        if link.interface:
            mp = props[(link.interface, link.side)]
            links[name] = replace(link, mass=mp.mass, com=mp.com.copy(), inertia=mp.inertia.copy())
        else:
            links[name] = replace(link)

    thrusters = []
    for t in model.thrusters:
        parent = model.links[t.parent]
        if parent.interface:
            frame = frames[(parent.interface, parent.side)]
            t = replace(t, position=frame.position.copy(), axis=frame.axis / np.linalg.norm(frame.axis),
                        contact_area=frame.contact_area, tilt_deg=frame.tilt_deg)
        thrusters.append(replace(t))

    joints = [replace(j) for j in model.joints]
    return RobotModel(model.name, links, joints, thrusters, model.gravity, design=theta)


def emit_model(model: RobotModel, theta: GeometryParams, path,
               geometry: Optional[GeometryConfig] = None) -> Path:
    path = Path(path)
    text = model_to_xml(apply_design(model, theta, geometry))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise ModelError(f"Cannot write model to {path}: {e}") from e
    return path
