"""Egocentric bird's-eye-view grid: splatting, embeddings, node projection.

The grid is UxV with the agent at the exact central cell, +x (forward)
along increasing u and +y (left) along increasing v.  Cell (u, v) covers the
square centered at ((u - U//2) * cell_size, (v - V//2) * cell_size).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .geometry import Pose, PointCloud


@dataclass(frozen=True)
class MapSpec:
    """Geometry of the egocentric grid."""

    u: int = 21
    v: int = 21
    cell_size: float = 0.5
    z_min: float = -0.5
    z_max: float = 2.5

    def __post_init__(self):
        if self.u % 2 == 0 or self.v % 2 == 0 or self.u < 1 or self.v < 1:
            raise ValueError("grid dimensions must be odd so the agent sits on a cell")
        if self.cell_size <= 0.0:
            raise ValueError("cell_size must be positive")
        if self.z_min >= self.z_max:
            raise ValueError("z_min must be below z_max")

    @property
    def center(self) -> tuple[int, int]:
        return self.u // 2, self.v // 2

    @property
    def half_diagonal(self) -> float:
        """Distance from the map center to an outer corner of the grid."""
        return 0.5 * math.hypot(self.u * self.cell_size, self.v * self.cell_size)

    def cell_center(self, u: int, v: int) -> tuple[float, float]:
        cu, cv = self.center
        return (u - cu) * self.cell_size, (v - cv) * self.cell_size

    def bin(self, x: float, y: float) -> tuple[int, int]:
        """Indices of the cell containing (x, y); may fall outside the grid."""
        cu, cv = self.center
        return (int(math.floor(x / self.cell_size + 0.5)) + cu,
                int(math.floor(y / self.cell_size + 0.5)) + cv)


@dataclass
class MetricMap:
    """Egocentric feature grid with occupancy bookkeeping.

    features[u, v] is the mean of the features splatted into the cell
    (zero where unobserved), counts/observed track occupancy, semantics holds
    the OR of point bitsets, and navigable/cell_to_nodes are filled in by
    the local action space projection.
    """

    spec: MapSpec
    features: np.ndarray
    counts: np.ndarray
    observed: np.ndarray
    semantics: np.ndarray
    navigable: np.ndarray
    cell_to_nodes: dict = field(default_factory=dict)
    masked: np.ndarray | None = None

    @property
    def feature_dim(self) -> int:
        return self.features.shape[2]

    def mask_grid(self) -> np.ndarray:
        if self.masked is None:
            return np.zeros((self.spec.u, self.spec.v), dtype=bool)
        return self.masked


def splat(pc: PointCloud, spec: MapSpec) -> MetricMap:
    """Orthographic average pooling of an egocentric cloud into the grid.

    Points outside [z_min, z_max] or the map extent are dropped; surviving
    points are binned by (x, y) and each cell keeps the arithmetic mean of
    its features and the union of its semantic bitsets.
    """
    sums, counts, sem = kernels.splat_accumulate(
        pc.positions, pc.features, pc.semantics,
        spec.u, spec.v, spec.cell_size, spec.z_min, spec.z_max)
    observed = counts > 0
    features = np.zeros_like(sums)
    np.divide(sums, counts[:, :, None], out=features, where=observed[:, :, None])
    return MetricMap(spec=spec, features=features, counts=counts,
                     observed=observed, semantics=sem,
                     navigable=np.zeros_like(observed))


def polar_embedding(u: int, v: int, spec: MapSpec) -> np.ndarray:
    """[cos t, sin t, dis] for a cell: t from the forward axis, dis in [0, 1].

    dis is the cell-center distance normalized by the half-diagonal of the
    full map extent; the central cell uses t := 0 by convention.
    """
    if not (0 <= u < spec.u and 0 <= v < spec.v):
        raise IndexError(f"cell ({u}, {v}) outside {spec.u}x{spec.v} grid")
    x, y = spec.cell_center(u, v)
    if u == spec.u // 2 and v == spec.v // 2:
        return np.array([1.0, 0.0, 0.0])
    theta = math.atan2(y, x)
    dis = math.hypot(x, y) / spec.half_diagonal
    return np.array([math.cos(theta), math.sin(theta), dis])


def polar_embedding_grid(spec: MapSpec) -> np.ndarray:
    """polar_embedding for every cell, shape (u, v, 3)."""
    out = np.empty((spec.u, spec.v, 3))
    for u in range(spec.u):
        for v in range(spec.v):
            out[u, v] = polar_embedding(u, v, spec)
    return out


def node_to_cell(agent_pose: Pose, node_position, spec: MapSpec):
    """Project a world position into the egocentric grid.

    Returns (u, v, clamped); positions outside the extent clamp to the
    nearest boundary cell with clamped=True.
    """
    ego = agent_pose.inverse().apply(np.asarray(node_position, dtype=np.float64))
    u, v = spec.bin(float(ego[0]), float(ego[1]))
    clamped = not (0 <= u < spec.u and 0 <= v < spec.v)
    return min(max(u, 0), spec.u - 1), min(max(v, 0), spec.v - 1), clamped


def local_action_space(topo, agent_pose: Pose, metric_map: MetricMap):
    """Project the current node and its one-hop neighbors onto the grid.

    Returns [(node_id, u, v), ...] with the current node first, and records
    the navigable mask and cell -> node registrations on ``metric_map``.
    Multiple nodes landing in one cell are all registered, in order.
    """
    current = topo.current_node()
    spec = metric_map.spec
    entries = []
    for node in [current] + topo.neighbors(current.id):
        u, v, _ = node_to_cell(agent_pose, node.position, spec)
        entries.append((node.id, u, v))
        metric_map.navigable[u, v] = True
        metric_map.cell_to_nodes.setdefault((u, v), []).append(node.id)
    return entries


def cell_to_node(metric_map: MetricMap, u: int, v: int) -> list:
    """Node ids registered at a cell (empty when none), insertion order."""
    return list(metric_map.cell_to_nodes.get((u, v), []))
