# This source code is licensed under the MIT license found in the
# LICENSE file in the root directory of this source tree.

"""Plane-strain quadrilateral meshes of the plate with a hole.

Elements are 4-node bilinear quadrilaterals with nodes in counter-clockwise
order, integrated with a 2x2 Gauss rule. Global degrees of freedom are
interleaved per node: node ``a`` owns ``2a`` (x) and ``2a + 1`` (y).
"""

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree, Delaunay, QhullError

from .errors import ConfigError, InsufficientSensorsError, MeshError, SensorCollisionError

log: logging.Logger = logging.getLogger("hyperdisc")

DIM = 2

_G: float = 1.0 / math.sqrt(3.0)
GAUSS_POINTS: np.ndarray = np.array([[-_G, -_G], [_G, -_G], [_G, _G], [-_G, _G]])
GAUSS_WEIGHTS: np.ndarray = np.ones(4)
REFERENCE_NODES: np.ndarray = np.array(
    [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]
)

# Relative tolerance used to decide whether a node lies on a straight boundary.
BOUNDARY_TOL = 1e-10
# Chords between neighbouring nodes on the hole boundary sag this far into it.
HOLE_SLACK = 0.05


def shape_functions(xi: np.ndarray) -> np.ndarray:
    """Bilinear shape functions, shape (n_points, 4)."""
    xi = np.atleast_2d(xi)
    return 0.25 * (
        (1.0 + xi[:, None, 0] * REFERENCE_NODES[None, :, 0])
        * (1.0 + xi[:, None, 1] * REFERENCE_NODES[None, :, 1])
    )


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Derivatives of the shape functions w.r.t. (xi, eta), shape (n_points, 4, 2)."""
    xi = np.atleast_2d(xi)
    r = REFERENCE_NODES[None, :, :]
    d_xi = 0.25 * r[..., 0] * (1.0 + xi[:, None, 1] * r[..., 1])
    d_eta = 0.25 * r[..., 1] * (1.0 + xi[:, None, 0] * r[..., 0])
    return np.stack([d_xi, d_eta], axis=-1)


class Quadrature(NamedTuple):
    # N[g, a]: shape function a at Gauss point g
    N: np.ndarray
    # dN_dX[e, g, a, J]: reference-configuration gradients
    dN_dX: np.ndarray
    # wdet[e, g]: Gauss weight times Jacobian determinant
    wdet: np.ndarray
    # points[e, g, :]: reference coordinates of the Gauss points
    points: np.ndarray
    detJ: np.ndarray


class Hole(NamedTuple):
    cx: float
    cy: float
    radius: float

    def contains(self, points: np.ndarray, strict: bool = True) -> np.ndarray:
        distance = np.hypot(points[..., 0] - self.cx, points[..., 1] - self.cy)
        if strict:
            return distance < self.radius * (1.0 - 1e-9)
        return distance <= self.radius

    def crosses(self, a: np.ndarray, b: np.ndarray, slack: float = 0.0) -> bool:
        """Whether the segment a-b comes closer to the centre than
        ``(1 - slack) * radius``."""
        center = np.array([self.cx, self.cy])
        d = b - a
        t = float(np.clip(np.dot(center - a, d) / np.dot(d, d), 0.0, 1.0))
        distance = float(np.hypot(*(a + t * d - center)))
        return distance < self.radius * (1.0 - max(slack, 1e-9))

    def overlaps(
        self, a: np.ndarray, b: np.ndarray, c: np.ndarray, slack: float = 0.0
    ) -> bool:
        """Whether the triangle abc covers part of the interior."""
        if any(self.crosses(p, q, slack) for p, q in ((a, b), (b, c), (c, a))):
            return True
        center = np.array([self.cx, self.cy])
        sides = [
            (q[0] - p[0]) * (center[1] - p[1]) - (q[1] - p[1]) * (center[0] - p[0])
            for p, q in ((a, b), (b, c), (c, a))
        ]
        return bool(all(s > 0 for s in sides) or all(s < 0 for s in sides))


@dataclass(frozen=True, eq=False)
class Mesh:
    nodes: np.ndarray
    elements: np.ndarray
    dirichlet_dofs: np.ndarray
    neumann_edges: Tuple[Tuple[int, int], ...]
    hole: Optional[Hole] = None
    width: float = 1.0
    height: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "nodes", _frozen(np.asarray(self.nodes, float)))
        object.__setattr__(self, "elements", _frozen(np.asarray(self.elements, int)))
        object.__setattr__(
            self,
            "dirichlet_dofs",
            _frozen(np.unique(np.asarray(self.dirichlet_dofs, int))),
        )
        object.__setattr__(
            self, "neumann_edges", tuple((int(e), int(k)) for e, k in self.neumann_edges)
        )
        self.validate()

    @property
    def n_nodes(self) -> int:
        return int(self.nodes.shape[0])

    @property
    def n_gdof(self) -> int:
        return self.n_nodes * DIM

    @property
    def n_elements(self) -> int:
        return int(self.elements.shape[0])

    @cached_property
    def free_dofs(self) -> np.ndarray:
        mask = np.ones(self.n_gdof, dtype=bool)
        mask[self.dirichlet_dofs] = False
        return _frozen(np.flatnonzero(mask))

    @cached_property
    def element_dofs(self) -> np.ndarray:
        """Global DOF indices per element, shape (n_elements, 8)."""
        dofs = DIM * self.elements[:, :, None] + np.arange(DIM)[None, None, :]
        return _frozen(dofs.reshape(self.n_elements, -1))

    @cached_property
    def quadrature(self) -> Quadrature:
        X = self.nodes[self.elements]
        dN_dxi = shape_gradients(GAUSS_POINTS)
        jac = np.einsum("eai,gaj->egij", X, dN_dxi)
        det = np.linalg.det(jac)
        inv = np.linalg.inv(jac)
        dN_dX = np.einsum("gaj,egjk->egak", dN_dxi, inv)
        N = shape_functions(GAUSS_POINTS)
        points = np.einsum("ga,eai->egi", N, X)
        return Quadrature(
            N=N,
            dN_dX=dN_dX,
            wdet=det * GAUSS_WEIGHTS[None, :],
            points=points,
            detJ=det,
        )

    def validate(self) -> None:
        if self.elements.ndim != 2 or self.elements.shape[1] != 4:
            raise MeshError("elements must be 4-node quadrilaterals")
        if self.elements.min() < 0 or self.elements.max() >= self.n_nodes:
            raise MeshError("element connectivity refers to unknown nodes")
        bad = np.flatnonzero((self.quadrature.detJ <= 0.0).any(axis=1))
        if bad.size:
            raise MeshError("non-positive Jacobian determinant", element=int(bad[0]))
        if self.dirichlet_dofs.size and (
            self.dirichlet_dofs.min() < 0 or self.dirichlet_dofs.max() >= self.n_gdof
        ):
            raise MeshError("Dirichlet DOF out of range")
        if self.hole is not None and self.hole.contains(self.nodes).any():
            raise MeshError("node lies inside the hole")

    def area(self) -> float:
        return float(self.quadrature.wdet.sum())

    def edge_nodes(self, element: int, local_edge: int) -> Tuple[int, int]:
        a = self.elements[element, local_edge]
        b = self.elements[element, (local_edge + 1) % 4]
        return int(a), int(b)

    def neumann_length(self) -> float:
        total = 0.0
        for element, local_edge in self.neumann_edges:
            a, b = self.edge_nodes(element, local_edge)
            total += float(np.linalg.norm(self.nodes[b] - self.nodes[a]))
        return total

    def dirichlet_nodes(self) -> np.ndarray:
        mask = np.zeros(self.n_gdof, dtype=bool)
        mask[self.dirichlet_dofs] = True
        return np.flatnonzero(mask.reshape(-1, DIM).any(axis=1))

    def element_of(self, point: Sequence[float]) -> int:
        """Element whose Gauss-point centroid is closest to ``point``."""
        centroids = self.quadrature.points.mean(axis=1)
        return int(np.argmin(np.linalg.norm(centroids - np.asarray(point), axis=1)))

    def to_json(self) -> Dict[str, Any]:
        """Field order: nodes, elements, dirichlet_dofs, neumann_edges, hole,
        width, height."""
        return {
            "nodes": self.nodes.tolist(),
            "elements": self.elements.tolist(),
            "dirichlet_dofs": self.dirichlet_dofs.tolist(),
            "neumann_edges": [list(edge) for edge in self.neumann_edges],
            "hole": list(self.hole) if self.hole is not None else None,
            "width": self.width,
            "height": self.height,
        }

    @staticmethod
    def from_json(document: Union[str, Dict[str, Any]]) -> "Mesh":
        if isinstance(document, str):
            document = json.loads(document)
        hole = document.get("hole")
        return Mesh(
            nodes=np.array(document["nodes"], dtype=float),
            elements=np.array(document["elements"], dtype=int),
            dirichlet_dofs=np.array(document["dirichlet_dofs"], dtype=int),
            neumann_edges=tuple(tuple(edge) for edge in document["neumann_edges"]),
            hole=Hole(*hole) if hole is not None else None,
            width=float(document.get("width", 1.0)),
            height=float(document.get("height", 1.0)),
        )


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


def _on_line(values: np.ndarray, target: float, scale: float) -> np.ndarray:
    return np.abs(values - target) <= BOUNDARY_TOL * max(scale, 1.0)


def _boundary_edges(
    nodes: np.ndarray, elements: np.ndarray, on_boundary: np.ndarray
) -> Tuple[Tuple[int, int], ...]:
    edges: List[Tuple[int, int]] = []
    for element, connectivity in enumerate(elements):
        for local_edge in range(4):
            a = connectivity[local_edge]
            b = connectivity[(local_edge + 1) % 4]
            if a != b and on_boundary[a] and on_boundary[b]:
                edges.append((element, local_edge))
    return tuple(edges)


def _left_edge_dofs(nodes: np.ndarray, width: float) -> np.ndarray:
    fixed = np.flatnonzero(_on_line(nodes[:, 0], 0.0, width))
    return np.sort(np.concatenate([DIM * fixed, DIM * fixed + 1]))


def build_plate_with_hole(
    width: float = 1.0,
    height: float = 1.0,
    hole_radius: float = 0.25,
    refinement: int = 3,
) -> Mesh:
    """Structured O-grid around a central hole.

    The ring of nodes around the hole is split into four blocks, one per plate
    side; each block interpolates linearly between the hole arc and the side.
    The left edge is clamped, the right edge carries the traction.
    """
    if refinement < 1:
        raise ConfigError(f"refinement must be >= 1, got {refinement}")
    if not 0.0 < hole_radius < 0.5 * min(width, height):
        raise ConfigError(
            f"hole radius {hole_radius} must lie in (0, {0.5 * min(width, height)})"
        )

    n_t = 4 * refinement
    n_r = 4 * refinement
    n_theta = 4 * n_t
    cx, cy = 0.5 * width, 0.5 * height
    corners = np.array([[width, 0.0], [width, height], [0.0, height], [0.0, 0.0]])
    angles = np.unwrap(np.arctan2(corners[:, 1] - cy, corners[:, 0] - cx))
    angles = np.append(angles, angles[0] + 2.0 * math.pi)
    corners = np.vstack([corners, corners[:1]])

    nodes = np.empty((n_theta * (n_r + 1), DIM))
    t = np.linspace(0.0, 1.0, n_r + 1)
    for k in range(n_theta):
        block, i = divmod(k, n_t)
        s = i / n_t
        theta = angles[block] + s * (angles[block + 1] - angles[block])
        arc = np.array(
            [cx + hole_radius * math.cos(theta), cy + hole_radius * math.sin(theta)]
        )
        side = corners[block] + s * (corners[block + 1] - corners[block])
        nodes[k * (n_r + 1) : (k + 1) * (n_r + 1)] = (
            (1.0 - t)[:, None] * arc[None, :] + t[:, None] * side[None, :]
        )

    def node(k: int, j: int) -> int:
        return (k % n_theta) * (n_r + 1) + j

    elements = np.array(
        [
            [node(k, j), node(k, j + 1), node(k + 1, j + 1), node(k + 1, j)]
            for k in range(n_theta)
            for j in range(n_r)
        ],
        dtype=int,
    )

    on_right = _on_line(nodes[:, 0], width, width)
    mesh = Mesh(
        nodes=nodes,
        elements=elements,
        dirichlet_dofs=_left_edge_dofs(nodes, width),
        neumann_edges=_boundary_edges(nodes, elements, on_right),
        hole=Hole(cx, cy, hole_radius),
        width=width,
        height=height,
    )
    log.debug(
        "Built plate mesh: %d nodes, %d elements, %d Neumann edges",
        mesh.n_nodes,
        mesh.n_elements,
        len(mesh.neumann_edges),
    )
    return mesh


@dataclass(frozen=True, eq=False)
class SensorSet:
    positions: np.ndarray
    node_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    def __post_init__(self) -> None:
        object.__setattr__(self, "positions", _frozen(np.asarray(self.positions, float)))
        object.__setattr__(self, "node_indices", _frozen(np.asarray(self.node_indices, int)))
        if self.n_sen < 1:
            raise ConfigError("at least one sensor is required")

    @property
    def n_sen(self) -> int:
        return int(self.node_indices.shape[0])

    @property
    def n_gsen(self) -> int:
        return self.n_sen * DIM

    @property
    def dof_indices(self) -> np.ndarray:
        return (DIM * self.node_indices[:, None] + np.arange(DIM)[None, :]).ravel()

    def node_positions(self, mesh: Mesh) -> np.ndarray:
        return mesh.nodes[self.node_indices]

    def to_json(self) -> Dict[str, Any]:
        return {
            "positions": self.positions.tolist(),
            "node_indices": self.node_indices.tolist(),
        }


def _ring(n: int, radius: float, cx: float, cy: float, offset: float = 0.0) -> np.ndarray:
    theta = offset + 2.0 * math.pi * np.arange(n) / n
    return np.column_stack([cx + radius * np.cos(theta), cy + radius * np.sin(theta)])


def preset_positions(name: str, mesh: Mesh) -> np.ndarray:
    """Sensor coordinates of the named layouts.

    sparse3:  the right-edge midpoint plus two points on the top and bottom edges.
    medium13: a ring of eight around the hole plus five points on the loaded
              edge and the top/bottom midpoints.
    dense38:  two staggered rings of twelve, five points on the loaded edge,
              three on each free edge and three near the clamped edge.
    """
    w, h = mesh.width, mesh.height
    if mesh.hole is not None:
        cx, cy, radius = mesh.hole
    else:
        cx, cy, radius = 0.5 * w, 0.5 * h, 0.0
    gap = 0.5 * min(w, h) - radius

    if name == "sparse3":
        return np.array([[w, 0.5 * h], [0.75 * w, h], [0.75 * w, 0.0]])
    if name == "medium13":
        edge = np.array(
            [[w, 0.0], [w, 0.5 * h], [w, h], [0.5 * w, h], [0.5 * w, 0.0]]
        )
        return np.vstack([_ring(8, radius + 0.5 * gap, cx, cy), edge])
    if name == "dense38":
        inner = _ring(12, radius + 0.3 * gap, cx, cy)
        outer = _ring(12, radius + 0.8 * gap, cx, cy, offset=math.pi / 12.0)
        right = np.column_stack([np.full(5, w), np.linspace(0.0, h, 5)])
        xs = np.array([0.25, 0.5, 0.75]) * w
        top = np.column_stack([xs, np.full(3, h)])
        bottom = np.column_stack([xs, np.zeros(3)])
        clamped = np.array([[0.1 * w, 0.1 * h], [0.1 * w, 0.5 * h], [0.1 * w, 0.9 * h]])
        return np.vstack([inner, outer, right, top, bottom, clamped])
    raise ConfigError(
        f"unknown sensor preset `{name}`; expected sparse3, medium13 or dense38"
    )


SENSOR_PRESETS: Tuple[str, ...] = ("sparse3", "medium13", "dense38")


def place_sensors(
    mesh: Mesh, layout: Union[str, Sequence[Sequence[float]], np.ndarray]
) -> SensorSet:
    """Snap requested positions to the nearest node off the Dirichlet boundary."""
    if isinstance(layout, str):
        positions = preset_positions(layout, mesh)
    else:
        positions = np.atleast_2d(np.asarray(layout, dtype=float))
    if positions.size == 0:
        raise ConfigError("at least one sensor is required")

    candidates = np.setdiff1d(np.arange(mesh.n_nodes), mesh.dirichlet_nodes())
    _, nearest = cKDTree(mesh.nodes[candidates]).query(positions)
    node_indices = candidates[np.asarray(nearest, dtype=int)]

    unique, counts = np.unique(node_indices, return_counts=True)
    collisions = unique[counts > 1]
    if collisions.size:
        details = "; ".join(
            f"node {node} <- sensors {np.flatnonzero(node_indices == node).tolist()}"
            for node in collisions
        )
        raise SensorCollisionError(f"sensors snap to the same node: {details}")
    return SensorSet(positions=positions, node_indices=node_indices)


def build_sensor_mesh(
    sensor_points: np.ndarray,
    width: float,
    height: float,
    hole: Optional[Hole] = None,
    min_sensors: int = 10,
) -> Tuple[Mesh, int]:
    """Coarse mesh whose nodes are the sensor points plus boundary anchors.

    Anchors are the plate corners and three extra clamped-edge points. Sensors
    come first in the node ordering; the returned count is the number of nodes
    that are sensors. Delaunay triangles are stored as collapsed quadrilaterals
    (last node repeated); triangles reaching into the hole are dropped, so
    no element bridges it.
    """
    sensor_points = np.atleast_2d(np.asarray(sensor_points, dtype=float))
    n_sen = sensor_points.shape[0]
    if n_sen < min_sensors:
        raise InsufficientSensorsError(
            f"{n_sen} sensors are too few to mesh the domain (need >= {min_sensors})"
        )

    anchors = np.array(
        [
            [0.0, 0.0],
            [0.0, 0.25 * height],
            [0.0, 0.5 * height],
            [0.0, 0.75 * height],
            [0.0, height],
            [width, 0.0],
            [width, height],
        ]
    )
    scale = max(width, height)
    tree = cKDTree(sensor_points)
    distance, _ = tree.query(anchors)
    anchors = anchors[distance > 1e-9 * scale]
    points = np.vstack([sensor_points, anchors])

    try:
        triangulation = Delaunay(points)
    except QhullError as error:
        raise InsufficientSensorsError(f"sensor triangulation failed: {error}") from error

    triangles = []
    for simplex in triangulation.simplices:
        a, b, c = points[simplex]
        signed = 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
        if abs(signed) <= 1e-12 * scale * scale:
            continue
        if hole is not None and hole.overlaps(a, b, c, HOLE_SLACK):
            continue
        ordered = simplex if signed > 0 else simplex[[0, 2, 1]]
        triangles.append([ordered[0], ordered[1], ordered[2], ordered[2]])
    if not triangles:
        raise InsufficientSensorsError("sensor triangulation produced no elements")

    elements = np.array(triangles, dtype=int)
    on_right = _on_line(points[:, 0], width, width)
    mesh = Mesh(
        nodes=points,
        elements=elements,
        dirichlet_dofs=_left_edge_dofs(points, width),
        neumann_edges=_boundary_edges(points, elements, on_right),
        hole=None,
        width=width,
        height=height,
    )
    log.info(
        "Sensor mesh: %d nodes (%d sensors), %d elements",
        mesh.n_nodes,
        n_sen,
        mesh.n_elements,
    )
    return mesh, n_sen
