"""Layered top-down spatial semantic map.

The map is an ``s x s x c`` grid anchored at the start pose: the agent's
first position falls in cell ``(s // 2, s // 2)`` and the map is never
re-centred. Cell ``(i, j)`` indexes world ``x`` with ``i`` and world ``z``
with ``j``; layer ``k`` holds objects of class ``k``.

Grid-graph structure (fixed at construction):

* layer 0 connects each cell to its 4-neighbours;
* every ``(i, j)`` is connected between adjacent layers ``k`` and ``k + 1``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .feature_bank import NODE_DIM, FeatureBank, compose_node_feature
from .semantic_graphs import Detection

logger = logging.getLogger(__name__)

Cell = Tuple[int, int]
CellKey = Tuple[int, int, int]


# -----------------------------------------------------------------------------
# Inputs
# -----------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class DepthImage:
    """Per-pixel depth in metres, indexed ``values[row, col]``."""

    values: np.ndarray

    def __post_init__(self) -> None:
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.size == 0:
            raise ValueError(f"zero-size or non 2-D depth image: shape {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0):
            raise ValueError("depth values must be finite and >= 0")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        """Rows in pixels."""
        return int(self.values.shape[0])

    @property
    def width(self) -> int:
        """Columns in pixels."""
        return int(self.values.shape[1])


@dataclass(frozen=True)
class BoundingBox:
    """Half-open pixel box ``x_min <= u < x_max``, ``y_min <= v < y_max``."""

    x_min: int
    y_min: int
    x_max: int
    y_max: int

    @property
    def degenerate(self) -> bool:
        """True when the box covers no pixel."""
        return self.x_max <= self.x_min or self.y_max <= self.y_min

    def check_within(self, width: int, height: int) -> None:
        """Raise ``ValueError`` unless the box lies inside a ``width x height`` image."""
        if (
            self.x_min < 0
            or self.y_min < 0
            or self.x_max > width
            or self.y_max > height
            or self.x_max < self.x_min
            or self.y_max < self.y_min
        ):
            raise ValueError(
                f"bbox out of bounds: ({self.x_min}, {self.y_min}, {self.x_max}, "
                f"{self.y_max}) for a {width}x{height} image"
            )


@dataclass(frozen=True)
class AgentPose:
    """Agent position (metres), heading, and camera pitch (degrees).

    Traces may carry absolute poses; the map works in the frame of the first
    pose (see :meth:`relative_to`). ``yaw`` 0 faces world ``+z`` and increases clockwise seen from above, so
    90 faces ``+x``. Positive ``camera_pitch`` tilts the camera down.
    """

    x: float = 0.0
    z: float = 0.0
    yaw: float = 0.0
    camera_pitch: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "z", "yaw", "camera_pitch"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"pose {name} must be finite")
        if not (0.0 <= self.yaw < 360.0):
            raise ValueError(f"yaw must lie in [0, 360), got {self.yaw}")

    def relative_to(self, origin: AgentPose) -> AgentPose:
        """This pose expressed in the frame of ``origin``.

        ``origin`` lands at ``(0, 0)`` with yaw 0; camera pitch is kept as is.
        """
        dx, dz = self.x - origin.x, self.z - origin.z
        oy = math.radians(origin.yaw)
        co, so = math.cos(oy), math.sin(oy)
        yaw = (self.yaw - origin.yaw) % 360.0
        return AgentPose(
            x=dx * co - dz * so,
            z=dx * so + dz * co,
            yaw=0.0 if yaw >= 360.0 else yaw,
            camera_pitch=self.camera_pitch,
        )


@dataclass(frozen=True)
class CameraConfig:
    """Pinhole intrinsics from image size and horizontal field of view."""

    width: int = 300
    height: int = 300
    fov: float = 90.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("zero-size image in camera config")
        if not (0.0 < self.fov < 180.0):
            raise ValueError(f"fov must lie in (0, 180), got {self.fov}")

    @property
    def focal(self) -> float:
        """Focal length in pixels, shared by both axes."""
        return (self.width / 2.0) / math.tan(math.radians(self.fov) / 2.0)


# -----------------------------------------------------------------------------
# Projection
# -----------------------------------------------------------------------------
def project_detection(
    depth: DepthImage,
    bbox: BoundingBox,
    pose: AgentPose,
    camera: CameraConfig,
    map_size: int,
    cell_size: float,
    stride: int = 1,
) -> List[Cell]:
    """Project the pixels of a box through the depth image onto grid cells.

    Each sampled pixel centre ``(u + 0.5, v + 0.5)`` with z-depth ``d`` is
    back-projected as ``x = (u + 0.5 - W/2) d / f``, ``y = (v + 0.5 - H/2) d / f``,
    ``z = d`` (camera ``x`` right, ``y`` down). The point is pitched into the
    agent frame, rotated by yaw, translated by the pose, and its height dropped.
    World ``(x, z)`` is discretised as ``s // 2 + floor(coord / cell_size)``.

    Returns:
        list[tuple[int, int]]: Distinct in-grid cells, sorted.

    Raises:
        ValueError: Box outside the image, image size not matching the camera,
            or non-positive stride.

    """
    if (depth.width, depth.height) != (camera.width, camera.height):
        raise ValueError(
            f"depth image is {depth.width}x{depth.height}, camera expects "
            f"{camera.width}x{camera.height}"
        )
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    bbox.check_within(depth.width, depth.height)
    if bbox.degenerate:
        return []

    us = np.arange(bbox.x_min, bbox.x_max, stride)
    vs = np.arange(bbox.y_min, bbox.y_max, stride)
    uu, vv = np.meshgrid(us, vs)
    d = depth.values[vv, uu]

    f = camera.focal
    x_cam = (uu + 0.5 - camera.width / 2.0) * d / f
    y_cam = (vv + 0.5 - camera.height / 2.0) * d / f

    pitch = math.radians(pose.camera_pitch)
    cp, sp = math.cos(pitch), math.sin(pitch)
    forward = d * cp - y_cam * sp

    yaw = math.radians(pose.yaw)
    cy, sy = math.cos(yaw), math.sin(yaw)
    world_x = pose.x + (x_cam * cy + forward * sy)
    world_z = pose.z + (forward * cy - x_cam * sy)

    centre = map_size // 2
    ii = centre + np.floor(world_x / cell_size).astype(np.int64)
    jj = centre + np.floor(world_z / cell_size).astype(np.int64)
    inside = (ii >= 0) & (ii < map_size) & (jj >= 0) & (jj < map_size)
    cells = {(int(i), int(j)) for i, j in zip(ii[inside].ravel(), jj[inside].ravel())}
    return sorted(cells)


# -----------------------------------------------------------------------------
# Grid graph
# -----------------------------------------------------------------------------
@lru_cache(maxsize=8)
def grid_graph(size: int, layers: int) -> nx.Graph:
    """Build the frozen ``size x size x layers`` grid graph.

    Nodes are ``(i, j, layer)``. Edges carry ``kind="neighbor"`` (layer 0,
    4-neighbourhood) or ``kind="vertical"`` (same cell, adjacent layers).
    """
    if size <= 0 or layers <= 0:
        raise ValueError(f"map dimensions must be positive, got s={size}, c={layers}")
    g = nx.Graph()
    g.add_nodes_from((i, j, k) for i in range(size) for j in range(size) for k in range(layers))
    base = nx.grid_2d_graph(size, size)
    g.add_edges_from(
        (((a[0], a[1], 0), (b[0], b[1], 0)) for a, b in base.edges()), kind="neighbor"
    )
    g.add_edges_from(
        (
            ((i, j, k), (i, j, k + 1))
            for i in range(size)
            for j in range(size)
            for k in range(layers - 1)
        ),
        kind="vertical",
    )
    return nx.freeze(g)


def edge_counts(graph: nx.Graph) -> Dict[str, int]:
    """Count grid edges by kind."""
    counts = {"neighbor": 0, "vertical": 0}
    for _, _, kind in graph.edges(data="kind"):
        counts[kind] += 1
    return counts


# -----------------------------------------------------------------------------
# Map
# -----------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class SpatialSemanticMap:
    """Snapshot of the layered map.

    Attributes:
        size: Cells per side ``s``.
        layers: Layer count ``c`` (one per object class).
        cell_size: Metres per cell.
        occupancy: ``(i, j, layer) -> node feature`` for occupied cells.

    """

    size: int
    layers: int
    cell_size: float
    occupancy: Dict[CellKey, np.ndarray] = field(default_factory=dict)

    @property
    def graph(self) -> nx.Graph:
        """Shared, frozen grid graph of this geometry."""
        return grid_graph(self.size, self.layers)

    @property
    def num_nodes(self) -> int:
        """Total grid nodes ``s * s * c``."""
        return self.size * self.size * self.layers

    @property
    def anchor(self) -> Cell:
        """Cell of the start pose."""
        return (self.size // 2, self.size // 2)

    @property
    def occupied_count(self) -> int:
        """Number of occupied cells."""
        return len(self.occupancy)


def init_map(size: int = 10, layers: int = 106, cell_size: float = 0.25) -> SpatialSemanticMap:
    """Create an empty map; the grid graph is built (and cached) here."""
    if size <= 0 or layers <= 0:
        raise ValueError(f"map dimensions must be positive, got s={size}, c={layers}")
    if not (cell_size > 0 and math.isfinite(cell_size)):
        raise ValueError(f"cell_size must be positive, got {cell_size}")
    grid_graph(size, layers)
    return SpatialSemanticMap(size=size, layers=layers, cell_size=float(cell_size))


def update_map(
    spatial_map: SpatialSemanticMap,
    detections: Sequence[Detection],
    depth: DepthImage,
    pose: AgentPose,
    bank: FeatureBank,
    camera: CameraConfig,
    stride: int = 1,
    origin: Optional[AgentPose] = None,
) -> SpatialSemanticMap:
    """Write each detection's node feature into its projected cells.

    The previous occupancy is carried forward; a cell at the same
    ``(i, j, layer)`` is overwritten by the newest feature. Detections without
    a bounding box are skipped. When ``origin`` is given, ``pose`` is taken
    relative to it so that ``origin`` sits at the map centre facing ``+j``.

    Raises:
        ValueError: A class id is not below the layer count.

    """
    if not detections:
        return spatial_map
    if origin is not None:
        pose = pose.relative_to(origin)
    occupancy = dict(spatial_map.occupancy)
    for idx, det in enumerate(detections):
        cid = int(det.class_id)
        if cid < 0 or cid >= spatial_map.layers:
            raise ValueError(
                f"unknown class {cid} for detection {idx}: map has {spatial_map.layers} layers"
            )
        if det.bbox is None:
            continue
        feature = compose_node_feature(det.visual, det.attributes, cid, bank)
        feature.setflags(write=False)
        cells = project_detection(
            depth,
            BoundingBox(*det.bbox),
            pose,
            camera,
            spatial_map.size,
            spatial_map.cell_size,
            stride,
        )
        for i, j in cells:
            occupancy[(i, j, cid)] = feature
    logger.debug("map: %d occupied cells", len(occupancy))
    return SpatialSemanticMap(
        size=spatial_map.size,
        layers=spatial_map.layers,
        cell_size=spatial_map.cell_size,
        occupancy=occupancy,
    )


def active_nodes(spatial_map: SpatialSemanticMap) -> List[Tuple[int, int, int, np.ndarray]]:
    """Occupied cells as ``(i, j, layer, feature)`` sorted by ``(i, j, layer)``."""
    return [(i, j, k, spatial_map.occupancy[(i, j, k)]) for i, j, k in sorted(spatial_map.occupancy)]


def active_node_graph(spatial_map: SpatialSemanticMap) -> Tuple[np.ndarray, np.ndarray]:
    """Features and symmetric adjacency of the grid subgraph induced by occupied cells.

    Returns:
        tuple: ``(features (N, 2371), adjacency (N, N))`` in :func:`active_nodes` order.

    """
    keys = sorted(spatial_map.occupancy)
    if not keys:
        return np.zeros((0, NODE_DIM)), np.zeros((0, 0), dtype=np.uint8)
    sub = spatial_map.graph.subgraph(keys)
    adjacency = nx.to_numpy_array(sub, nodelist=keys, dtype=np.float64, weight=None)
    features = np.stack([spatial_map.occupancy[k] for k in keys])
    return features, adjacency.astype(np.uint8)
