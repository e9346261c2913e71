"""Rigid-body transforms, inverse pinhole projection, and 3D point clouds.

Axis convention used everywhere in this package: +x forward, +y left,
+z up; heading 0 points along +x and increases counterclockwise.

Feature grids and depth grids are plain float64 arrays of shape
(grid_h, grid_w, d) and (grid_h, grid_w); depths are ranges in meters along
the pixel ray, not z-distances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError

ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform mapping p to rotation @ p + translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise DimensionError("pose needs a 3x3 rotation and a 3-vector")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= ORTHONORMAL_TOL or np.linalg.det(rot) <= 0.0:
            raise ValueError(f"rotation not orthonormal with det +1 (err={err:.3e})")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_yaw(heading: float, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Rotation by ``heading`` about +z, then translation."""
        c, s = math.cos(heading), math.sin(heading)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        return Pose(rot, np.asarray(translation, dtype=np.float64))

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform one (3,) point or an (n, 3) batch."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    @property
    def heading(self) -> float:
        """Yaw angle of the +x body axis in the parent frame."""
        return math.atan2(self.rotation[1, 0], self.rotation[0, 0])


@dataclass(frozen=True)
class CameraIntrinsics:
    """Angular pinhole grid: rays uniformly spaced across the field of view."""

    grid_h: int
    grid_w: int
    hfov: float
    vfov: float

    def __post_init__(self):
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError("grid dimensions must be >= 1")
        if not (0.0 < self.hfov < math.pi and 0.0 < self.vfov < math.pi):
            raise ValueError("fields of view must lie in (0, pi)")

    def ray_directions(self) -> np.ndarray:
        """Unit ray per cell center, shape (grid_h, grid_w, 3), camera frame.

        Row 0 looks up, column 0 looks left; azimuth is measured from +x
        toward +y and elevation from the xy-plane toward +z.
        """
        az = self.hfov / 2 - (np.arange(self.grid_w) + 0.5) * self.hfov / self.grid_w
        el = self.vfov / 2 - (np.arange(self.grid_h) + 0.5) * self.vfov / self.grid_h
        az, el = np.meshgrid(az, el)
        return np.stack([np.cos(el) * np.cos(az),
                         np.cos(el) * np.sin(az),
                         np.sin(el)], axis=-1)


class PointCloud:
    """Feature-tagged 3D points stored as parallel arrays.

    positions (n, 3) float64 meters; features (n, d) float64; semantics (n,)
    uint64 bitsets (bit c set when class c was observed at the point).
    """

    __slots__ = ("positions", "features", "semantics")

    def __init__(self, positions, features, semantics=None):
        positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] != positions.shape[0]:
            raise DimensionError("features must be (n, d) matching positions")
        if semantics is None:
            semantics = np.zeros(len(positions), dtype=np.uint64)
        else:
            semantics = np.asarray(semantics, dtype=np.uint64).reshape(-1)
            if semantics.shape[0] != positions.shape[0]:
                raise DimensionError("semantics must have one bitset per point")
        if not np.isfinite(positions).all() or not np.isfinite(features).all():
            raise ValueError("point cloud contains non-finite values")
        self.positions = positions
        self.features = features
        self.semantics = semantics

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    @staticmethod
    def empty(feature_dim: int) -> "PointCloud":
        return PointCloud(np.zeros((0, 3)), np.zeros((0, feature_dim)))

    @staticmethod
    def concatenate(clouds) -> "PointCloud":
        clouds = list(clouds)
        if not clouds:
            raise ValueError("nothing to concatenate")
        return PointCloud(
            np.concatenate([c.positions for c in clouds]),
            np.concatenate([c.features for c in clouds]),
            np.concatenate([c.semantics for c in clouds]))


def lift(features: np.ndarray, depths: np.ndarray, intr: CameraIntrinsics,
         pose: Pose, semantics: np.ndarray | None = None) -> PointCloud:
    """Inverse pinhole projection of a feature grid into a point cloud.

    Each grid cell shoots a ray through its center; the cell's point sits at
    range ``depths[r, c]`` along that ray, carries the cell's feature vector,
    and is mapped into the parent frame by ``pose``.  Cells with depth <= 0
    emit no point.  ``semantics`` may give a per-cell class id (negative for
    none), stored as a one-bit set on the point.
    """
    features = np.asarray(features, dtype=np.float64)
    depths = np.asarray(depths, dtype=np.float64)
    if features.ndim != 3 or depths.shape != features.shape[:2]:
        raise DimensionError(
            f"features {features.shape} and depths {depths.shape} disagree")
    if (intr.grid_h, intr.grid_w) != depths.shape:
        raise DimensionError("intrinsics grid does not match the feature grid")

    keep = depths > 0.0
    rays = intr.ray_directions()[keep]
    cam_points = rays * depths[keep][:, None]
    world = pose.apply(cam_points)

    sem_bits = None
    if semantics is not None:
        semantics = np.asarray(semantics)
        if semantics.shape != depths.shape:
            raise DimensionError("semantics grid does not match the feature grid")
        ids = semantics[keep].astype(np.int64)
        if (ids > 63).any():
            raise ValueError("semantic class ids must fit a 64-bit set")
        shifts = np.clip(ids, 0, 63).astype(np.uint64)
        sem_bits = np.where(ids >= 0, np.uint64(1) << shifts, np.uint64(0))
    return PointCloud(world, features[keep], sem_bits)


def transform_pointcloud(pc: PointCloud, t: Pose) -> PointCloud:
    """Apply a rigid transform to every point; features/semantics unchanged."""
    if len(pc) == 0:
        return pc
    return PointCloud(t.apply(pc.positions), pc.features, pc.semantics)
