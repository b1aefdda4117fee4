"""
PointCloud class for 3D point sets with optional normals and descriptors.
"""
from typing import Optional, Sequence

import numpy as np

NORMAL_TOLERANCE = 1e-6


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


class PointCloud:
    """Set of 3D points (meters) with optional unit normals and per-point descriptors."""

    __slots__ = ('points', 'normals', 'descriptors')

    def __init__(self, points: np.ndarray, normals: Optional[np.ndarray] = None,
                 descriptors: Optional[np.ndarray] = None):
        """
        Initialize a point cloud.

        Args:
            points: (N, 3) coordinates in meters
            normals: Optional (N, 3) unit normals
            descriptors: Optional (N, D) descriptor rows

        Raises:
            ValueError: If any invariant (finite coordinates, matching counts,
                unit normals, uniform descriptor dimension) is violated
        """
        points = np.asarray(points, dtype=np.float64)
        if points.size == 0:
            points = points.reshape(0, 3)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"Points must have shape (N, 3), got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ValueError("Point coordinates must be finite")

        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64)
            if normals.shape != points.shape:
                raise ValueError(f"Normals shape {normals.shape} does not match points {points.shape}")
            if len(normals):
                lengths = np.linalg.norm(normals, axis=1)
                if not np.all(np.abs(lengths - 1.0) <= NORMAL_TOLERANCE):
                    raise ValueError("Normals must have unit length")

        if descriptors is not None:
            descriptors = np.asarray(descriptors, dtype=np.float64)
            if descriptors.ndim != 2 or descriptors.shape[0] != points.shape[0]:
                raise ValueError(
                    f"Descriptors must have shape (N, D) with N={points.shape[0]}, got {descriptors.shape}")
            if not np.all(np.isfinite(descriptors)):
                raise ValueError("Descriptors must be finite")

        self.points = _readonly(points)
        self.normals = None if normals is None else _readonly(normals)
        self.descriptors = None if descriptors is None else _readonly(descriptors)

    @property
    def has_normals(self) -> bool:
        return self.normals is not None

    @property
    def has_descriptors(self) -> bool:
        return self.descriptors is not None

    def with_normals(self, normals: np.ndarray) -> 'PointCloud':
        """Copy of this cloud carrying ``normals``."""
        return PointCloud(self.points, normals, self.descriptors)

    def with_descriptors(self, descriptors: np.ndarray) -> 'PointCloud':
        """Copy of this cloud carrying ``descriptors``."""
        return PointCloud(self.points, self.normals, descriptors)

    def select(self, indices: Sequence[int]) -> 'PointCloud':
        """Subset by index array or boolean mask, keeping attached attributes."""
        indices = np.asarray(indices)
        return PointCloud(
            self.points[indices],
            None if self.normals is None else self.normals[indices],
            None if self.descriptors is None else self.descriptors[indices],
        )

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def __repr__(self) -> str:
        extras = []
        if self.normals is not None:
            extras.append("normals")
        if self.descriptors is not None:
            extras.append(f"descriptors[{self.descriptors.shape[1]}]")
        suffix = f", {', '.join(extras)}" if extras else ""
        return f"PointCloud(points={len(self)}{suffix})"
