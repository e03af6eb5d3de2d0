"""Linear-elastic static FEM over bracket solids and the safety-factor gate."""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from .geometry import (
    PARTS,
    GeometryConfig,
    GeometryError,
    GeometryParams,
    Solid,
    build_bracket,
    jet_mount_frame,
    require_valid,
)

# 7075 / ERGAL. Poisson ratio from handbook values.
YOUNGS_MODULUS = 71.7e9
POISSON_RATIO = 0.33
YIELD_STRENGTH = 462e6

JET_MAX_THRUST = 250.0
SF_THRESHOLD = 10.0
UNBOUNDED = math.inf

# Kuhn split of a hex (corner ids as in _HEX_CORNERS) into 6 tetrahedra
_HEX_CORNERS = np.array([
    [0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1],
])
_HEX_TETS = np.array([
    [0, 1, 2, 6], [0, 2, 3, 6], [0, 3, 7, 6],
    [0, 7, 4, 6], [0, 4, 5, 6], [0, 5, 1, 6],
])
# Hex faces: outward axis, sign, corner ids (counter-clockwise seen from outside)
_HEX_FACES = [
    (0, -1, [0, 3, 7, 4]), (0, 1, [1, 5, 6, 2]),
    (1, -1, [0, 4, 5, 1]), (1, 1, [3, 2, 6, 7]),
    (2, -1, [0, 1, 2, 3]), (2, 1, [4, 7, 6, 5]),
]


class MeshError(ValueError):
    """Mesh cannot be generated or violates its invariants."""


class SolverError(RuntimeError):
    """Static solve failed (singular system or no convergence)."""


@dataclass(frozen=True)
class Material:
    youngs_modulus: float = YOUNGS_MODULUS
    poisson_ratio: float = POISSON_RATIO
    yield_strength: float = YIELD_STRENGTH

    def __post_init__(self):
        if not self.youngs_modulus > 0:
            raise ValueError("Young's modulus must be positive")
        if not 0 < self.poisson_ratio < 0.5:
            raise ValueError("Poisson ratio must lie in (0, 0.5)")
        if not self.yield_strength > 0:
            raise ValueError("Yield strength must be positive")

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "Material":
        data = data or {}
        return cls(
            youngs_modulus=float(data.get("youngs_modulus", YOUNGS_MODULUS)),
            poisson_ratio=float(data.get("poisson_ratio", POISSON_RATIO)),
            yield_strength=float(data.get("yield_strength", YIELD_STRENGTH)),
        )

    def elasticity(self) -> np.ndarray:
        """6x6 isotropic constitutive matrix (Voigt order xx yy zz yz xz xy)."""
        E, nu = self.youngs_modulus, self.poisson_ratio
        lam = E * nu / ((1 + nu) * (1 - 2 * nu))
        mu = E / (2 * (1 + nu))
        D = np.zeros((6, 6))
        D[:3, :3] = lam
        D[:3, :3] += 2 * mu * np.eye(3)
        D[3:, 3:] = mu * np.eye(3)
        return D


@dataclass
class FemMesh:
    nodes: np.ndarray
    elements: np.ndarray
    fixed_nodes: np.ndarray
    loaded_faces: np.ndarray
    spacing: np.ndarray = field(default_factory=lambda: np.zeros(3))
    load_normal: Optional[np.ndarray] = None

    def signed_volumes(self) -> np.ndarray:
        p = self.nodes[self.elements]
        return np.einsum("ij,ij->i", np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), p[:, 3] - p[:, 0]) / 6.0

    def check(self):
        if len(self.elements) == 0:
            raise MeshError("Mesh has no elements")
        if self.elements.min() < 0 or self.elements.max() >= len(self.nodes):
            raise MeshError("Element node index out of range")
        if np.any(self.signed_volumes() <= 0):
            raise MeshError("Mesh has non-positive element volumes")
        if len(self.fixed_nodes) == 0:
            raise MeshError("Fixed node set is empty")
        if len(self.loaded_faces) == 0:
            raise MeshError("Loaded face set is empty")
        if np.intersect1d(self.fixed_nodes, np.unique(self.loaded_faces)).size:
            raise MeshError("Fixed and loaded sets overlap")

    def _face_cross(self) -> np.ndarray:
        p = self.nodes[self.loaded_faces]
        return np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross(), axis=1)

    def projected_areas(self) -> np.ndarray:
        """Loaded triangle areas projected onto the contact plane.

        A voxelized tilted seat is a staircase; its projected areas add up
        to the flat contact area. Without a load normal these are the plain
        triangle areas.
        """
        if self.load_normal is None:
            return self.face_areas()
        return 0.5 * np.abs(self._face_cross() @ self.load_normal)

    def loaded_area(self) -> float:
        return float(self.projected_areas().sum())


@dataclass
class StressResult:
    displacement: np.ndarray
    von_mises: np.ndarray
    sigma_max: float
    safety_factor: float
    iterations: int = 0


def generate_mesh(solid: Solid, target_edge: float) -> FemMesh:
    """Voxel the solid on one structured grid and split every kept hex into 6 tets."""
    if not target_edge > 0:
        raise MeshError("target_edge must be positive")
    if target_edge > 0.5 * solid.smallest_dimension() + 1e-12:
        raise MeshError(
            f"target_edge {target_edge:g} m too coarse for smallest dimension "
            f"{solid.smallest_dimension():g} m"
        )
    if solid.fixed_face is None or solid.loaded_face is None:
        raise MeshError("Solid has no fixed or loaded face")

    low, high = solid.bounds()
    extent = high - low
    counts = np.maximum(1, np.ceil(extent / target_edge - 1e-9)).astype(int)
    h = extent / counts

    ii, jj, kk = np.meshgrid(*(np.arange(n) for n in counts), indexing="ij")
    cells = np.stack([ii.ravel(), jj.ravel(), kk.ravel()], axis=1)
    centers = low + (cells + 0.5) * h
    kept = solid.contains(centers)
    if not kept.any():
        raise MeshError("No grid cell falls inside the solid")

    kept_grid = kept.reshape(counts)
    owner = np.full(len(centers), -1)
    for index, primitive in enumerate(solid.primitives):
        hit = (owner < 0) & primitive.contains(centers)
        owner[hit] = index

    # Node ids only for corners of kept cells
    node_dims = counts + 1
    corner_ids = (cells[kept][:, None, :] + _HEX_CORNERS[None, :, :])
    flat = np.ravel_multi_index(corner_ids.reshape(-1, 3).T, node_dims).reshape(-1, 8)
    used, inverse = np.unique(flat, return_inverse=True)
    hex_nodes = inverse.reshape(-1, 8)
    node_index = np.stack(np.unravel_index(used, node_dims), axis=1)
    nodes = low + node_index * h

    elements = hex_nodes[:, _HEX_TETS].reshape(-1, 4)

    kept_cells = cells[kept]
    kept_owner = owner[kept]
    fixed = _face_nodes(solid.fixed_face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, 0.9)
    loaded = _face_triangles(solid.loaded_face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, 1e-6)

    fixed_nodes = np.unique(fixed)
    # Seat triangles touching the clamp are dropped so the sets stay disjoint
    if len(loaded):
        touching = np.isin(loaded, fixed_nodes).any(axis=1)
        loaded = loaded[~touching]

    mesh = FemMesh(nodes, elements, fixed_nodes, loaded, h, np.asarray(solid.loaded_face.normal, dtype=float))
    mesh.check()
    return mesh


def _boundary_quads(face, kept_cells, kept_owner, kept_grid, hex_nodes, min_dot):
    normal = np.asarray(face.normal, dtype=float)
    counts = np.array(kept_grid.shape)
    for axis, sign, corners in _HEX_FACES:
        outward = np.zeros(3)
        outward[axis] = sign
        if outward @ normal < min_dot:
            continue
        neighbour = kept_cells.copy()
        neighbour[:, axis] += sign
        inside = np.all((neighbour >= 0) & (neighbour < counts), axis=1)
        exposed = ~inside
        exposed[inside] = ~kept_grid[tuple(neighbour[inside].T)]
        select = exposed & (kept_owner == face.primitive)
        for quad in hex_nodes[select][:, corners]:
            yield quad


def _face_quads(face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, min_dot):
    """Exposed quads of the face's primitive that tile the face itself.

    A quad qualifies when it looks out through the face (outward dot normal
    at least `min_dot`), its centroid lies within half a cell of the face
    plane, and the centroid projects inside the face's rectangle.
    """
    center = np.asarray(face.center, dtype=float)
    normal = np.asarray(face.normal, dtype=float)
    primitive = solid.primitives[face.primitive]
    local_normal = np.abs(primitive.R.T @ normal)
    lateral = local_normal < 0.5
    half = primitive.half_extents()
    tol = 0.5 * float(np.abs(normal) @ h) + 1e-12

    picked = []
    for quad in _boundary_quads(face, kept_cells, kept_owner, kept_grid, hex_nodes, min_dot):
        centroid = nodes[quad].mean(axis=0)
        if abs((centroid - center) @ normal) > tol:
            continue
        local = (centroid - primitive.c) @ primitive.R
        if np.all(np.abs(local[lateral]) <= half[lateral] + 1e-12):
            picked.append(quad)
    return np.array(picked, dtype=int).reshape(-1, 4)


def _face_nodes(face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, min_dot):
    return _face_quads(face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, min_dot).ravel()


def _face_triangles(face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, min_dot):
    quads = _face_quads(face, solid, kept_cells, kept_owner, kept_grid, hex_nodes, nodes, h, min_dot)
    triangles = np.concatenate([quads[:, [0, 1, 2]], quads[:, [0, 2, 3]]])
    return triangles.reshape(-1, 3)


def _strain_displacement(mesh: FemMesh) -> tuple[np.ndarray, np.ndarray]:
    """Per-element B matrices (6x12) and volumes."""
    p = mesh.nodes[mesh.elements]
    ones = np.ones((len(p), 4, 1))
    C = np.concatenate([ones, p], axis=2)
    grads = np.linalg.inv(C)[:, 1:, :]  # d(shape_i)/d(x,y,z): (E, 3, 4)
    volumes = np.abs(np.linalg.det(C)) / 6.0

    B = np.zeros((len(p), 6, 12))
    for i in range(4):
        dx, dy, dz = grads[:, 0, i], grads[:, 1, i], grads[:, 2, i]
        c = 3 * i
        B[:, 0, c] = dx
        B[:, 1, c + 1] = dy
        B[:, 2, c + 2] = dz
        B[:, 3, c + 1] = dz
        B[:, 3, c + 2] = dy
        B[:, 4, c] = dz
        B[:, 4, c + 2] = dx
        B[:, 5, c] = dy
        B[:, 5, c + 1] = dx
    return B, volumes


def _element_dofs(mesh: FemMesh) -> np.ndarray:
    return (3 * mesh.elements[:, :, None] + np.arange(3)[None, None, :]).reshape(-1, 12)


def assemble_stiffness(mesh: FemMesh, material: Material) -> sp.csr_matrix:
    B, volumes = _strain_displacement(mesh)
    D = material.elasticity()
    Ke = np.einsum("eji,jk,ekl,e->eil", B, D, B, volumes)
    dofs = _element_dofs(mesh)
    rows = np.repeat(dofs, 12, axis=1).ravel()
    cols = np.tile(dofs, (1, 12)).ravel()
    n = 3 * len(mesh.nodes)
    return sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def traction_loads(mesh: FemMesh, total_load: float, direction) -> np.ndarray:
    """Uniform traction over the contact area, lumped equally to triangle corners.

    Each triangle carries the load share of its projected area.
    """
    direction = np.asarray(direction, dtype=float)
    direction = direction / np.linalg.norm(direction)
    areas = mesh.projected_areas()
    f = np.zeros((len(mesh.nodes), 3))
    share = total_load * areas / areas.sum() / 3.0
    for corner in range(3):
        np.add.at(f, mesh.loaded_faces[:, corner], share[:, None] * direction[None, :])
    return f.ravel()


def conjugate_gradient(K, f, rtol: float = 1e-8, max_iter: Optional[int] = None):
    """Jacobi-preconditioned CG. Returns (solution, iterations)."""
    n = len(f)
    max_iter = max_iter or int(50 * math.sqrt(n)) + 1
    diag = K.diagonal()
    if np.any(diag <= 0):
        raise SolverError("Stiffness matrix has non-positive diagonal entries")
    inv_diag = 1.0 / diag

    x = np.zeros(n)
    r = f.copy()
    norm_f = np.linalg.norm(f)
    if norm_f == 0:
        return x, 0
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, max_iter + 1):
        Kp = K @ p
        curvature = p @ Kp
        if curvature <= 0 or not np.isfinite(curvature):
            raise SolverError("Singular stiffness (insufficient constraints)")
        alpha = rz / curvature
        x += alpha * p
        r -= alpha * Kp
        if np.linalg.norm(r) <= rtol * norm_f:
            return x, it
        z = inv_diag * r
        rz_next = r @ z
        p = z + (rz_next / rz) * p
        rz = rz_next
    raise SolverError(f"CG did not converge in {max_iter} iterations")


def solve_static(mesh: FemMesh, material: Material, total_load: float,
                 load_direction) -> StressResult:
    if total_load < 0:
        raise ValueError("total_load must be non-negative")
    n_dof = 3 * len(mesh.nodes)
    if total_load == 0:
        zeros = np.zeros(len(mesh.elements))
        return StressResult(np.zeros((len(mesh.nodes), 3)), zeros, 0.0, UNBOUNDED)

    K = assemble_stiffness(mesh, material)
    fixed = (3 * mesh.fixed_nodes[:, None] + np.arange(3)).ravel()
    free = np.setdiff1d(np.arange(n_dof), fixed)

    # Solve for the unit load and scale, so results are exactly linear in the load
    f_unit = traction_loads(mesh, 1.0, load_direction)
    d_unit = np.zeros(n_dof)
    d_unit[free], iterations = conjugate_gradient(K[free][:, free], f_unit[free])
    displacement = total_load * d_unit

    B, _ = _strain_displacement(mesh)
    strain = np.einsum("eij,ej->ei", B, displacement[_element_dofs(mesh)])
    stress = strain @ material.elasticity().T
    von_mises = von_mises_stress(stress)
    sigma_max = float(von_mises.max())
    return StressResult(
        displacement=displacement.reshape(-1, 3),
        von_mises=von_mises,
        sigma_max=sigma_max,
        safety_factor=safety_factor(sigma_max, material),
        iterations=iterations,
    )


def von_mises_stress(stress: np.ndarray) -> np.ndarray:
    sxx, syy, szz, syz, sxz, sxy = stress.T
    return np.sqrt(np.maximum(0.0, 0.5 * ((sxx - syy) ** 2 + (syy - szz) ** 2 + (szz - sxx) ** 2)
                              + 3.0 * (syz ** 2 + sxz ** 2 + sxy ** 2)))


def safety_factor(sigma_max: float, material: Material) -> float:
    """SF = σ_y / σ_MAX; zero stress gives the unbounded sentinel."""
    if sigma_max <= 0:
        return UNBOUNDED
    return material.yield_strength / sigma_max


def format_sf(sf: float) -> str:
    return "unbounded" if math.isinf(sf) else f"{sf:.3f}"


@dataclass
class GateResult:
    sf: float
    feasible: bool
    cause: str = ""
    per_part: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict, repr=False)
    meshes: dict = field(default_factory=dict, repr=False)


@dataclass
class FemConfig:
    target_edge: float = 0.004
    resolutions: tuple = (0.005, 0.004, 0.003)
    load: float = JET_MAX_THRUST
    threshold: float = SF_THRESHOLD

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> "FemConfig":
        data = data or {}
        return cls(
            target_edge=float(data.get("target_edge", 0.004)),
            resolutions=tuple(data.get("resolutions", (0.005, 0.004, 0.003))),
            load=float(data.get("load", JET_MAX_THRUST)),
            threshold=float(data.get("threshold", SF_THRESHOLD)),
        )


class StructuralGate:
    """SF >= threshold check for both jet interfaces, memoized per design."""

    def __init__(self, geometry: Optional[GeometryConfig] = None,
                 material: Optional[Material] = None, fem: Optional[FemConfig] = None,
                 keep_fields: bool = False):
        self.geometry = geometry or GeometryConfig()
        self.material = material or Material()
        self.fem = fem or FemConfig()
        self.keep_fields = keep_fields
        self._cache: dict[GeometryParams, GateResult] = {}
        self.evaluations = 0

    def __call__(self, theta: GeometryParams) -> GateResult:
        if theta in self._cache:
            return self._cache[theta]
        result = self._evaluate(theta)
        self._cache[theta] = result
        return result

    def _evaluate(self, theta: GeometryParams) -> GateResult:
        self.evaluations += 1
        try:
            require_valid(theta, on_grid=False)
        except GeometryError as e:
            return GateResult(0.0, False, cause=str(e))

        per_part, results, meshes = {}, {}, {}
        try:
            for part in PARTS:
                solid = build_bracket(theta, part, self.geometry)
                frame = jet_mount_frame(theta, part, self.geometry)
                mesh = generate_mesh(solid, self.fem.target_edge)
                result = solve_static(mesh, self.material, self.fem.load, frame.axis)
                per_part[part] = result.safety_factor
                if self.keep_fields:
                    results[part], meshes[part] = result, mesh
        except (GeometryError, MeshError, SolverError) as e:
            return GateResult(0.0, False, cause=f"{type(e).__name__}: {e}", per_part=per_part)

        sf = min(per_part.values())
        feasible = sf >= self.fem.threshold
        cause = "" if feasible else f"SF {format_sf(sf)} below {self.fem.threshold:g}"
        return GateResult(sf, feasible, cause, per_part, results, meshes)


def structural_gate(theta: GeometryParams, gate: Optional[StructuralGate] = None) -> GateResult:
    return (gate or StructuralGate())(theta)


def mesh_convergence(theta: GeometryParams, part: str, gate: Optional[StructuralGate] = None) -> list[tuple]:
    """(edge, sigma_max) of one part at every configured resolution, coarsest first."""
    gate = gate or StructuralGate()
    solid = build_bracket(theta, part, gate.geometry)
    axis = jet_mount_frame(theta, part, gate.geometry).axis
    levels = []
    for edge in sorted(gate.fem.resolutions, reverse=True):
        result = solve_static(generate_mesh(solid, edge), gate.material, gate.fem.load, axis)
        levels.append((float(edge), result.sigma_max))
    return levels


def convergence_change(levels: list[tuple]) -> float:
    """Relative sigma_max change between the two finest levels."""
    if len(levels) < 2:
        return 0.0
    (_, coarse), (_, fine) = levels[-2], levels[-1]
    return abs(fine - coarse) / max(abs(fine), 1e-300)


def dump_stress_csv(mesh: FemMesh, result: StressResult, prefix: Path, header: str = "") -> list[Path]:
    """Write node, element and Von Mises tables next to each other."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    nodes = pd.DataFrame(mesh.nodes, columns=["x", "y", "z"])
    nodes[["ux", "uy", "uz"]] = result.displacement
    elements = pd.DataFrame(mesh.elements, columns=["n0", "n1", "n2", "n3"])
    elements["von_mises"] = result.von_mises

    written = []
    for suffix, table in (("nodes", nodes), ("elements", elements)):
        path = prefix.with_name(f"{prefix.name}_{suffix}.csv")
        with open(path, "w", newline="") as f:
            if header:
                f.write(header + "\n")
            table.to_csv(f, index_label="id", float_format="%.9g")
        written.append(path)
    return written
