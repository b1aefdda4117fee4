"""
Rigid-body geometry shared by the registration pipeline.

Transforms, residuals, the truncated least squares cost, and pose error
metrics. Every function here is pure.
"""
from typing import Sequence

import numpy as np

from models.point_cloud import PointCloud
from models.rigid_transform import RigidTransform


def apply_transform(transform: RigidTransform, cloud: PointCloud) -> PointCloud:
    """
    Move a cloud rigidly.

    Args:
        transform: Rigid motion to apply
        cloud: Cloud to move

    Returns:
        PointCloud with p' = R p + t, normals rotated by R, descriptors carried unchanged
    """
    points = transform.apply(cloud.points)
    normals = None if cloud.normals is None else transform.rotate(cloud.normals)
    return PointCloud(points, normals, cloud.descriptors)


def compose(second: RigidTransform, first: RigidTransform) -> RigidTransform:
    """Transform that applies ``first`` then ``second``: R = R2 R1, t = R2 t1 + t2."""
    return second.compose(first)


def inverse(transform: RigidTransform) -> RigidTransform:
    """Inverse motion: R' = R^T, t' = -R^T t."""
    return transform.inverse()


def rotation_error_deg(rotation_1: np.ndarray, rotation_2: np.ndarray) -> float:
    """
    Geodesic angle between two rotations, in degrees within [0, 180].

    The arccos argument is clamped to [-1, 1].
    """
    rotation_1 = np.asarray(rotation_1, dtype=np.float64)
    rotation_2 = np.asarray(rotation_2, dtype=np.float64)
    cosine = (np.trace(rotation_1.T @ rotation_2) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(cosine, -1.0, 1.0))))


def translation_error(translation_1: Sequence[float], translation_2: Sequence[float]) -> float:
    """Euclidean distance between two translations, in meters."""
    diff = np.asarray(translation_1, dtype=np.float64) - np.asarray(translation_2, dtype=np.float64)
    return float(np.linalg.norm(diff))


def registration_residual(transform: RigidTransform, p: Sequence[float], q: Sequence[float]) -> float:
    """Residual r = ||q - R p - t|| of one correspondence, in meters."""
    p = np.asarray(p, dtype=np.float64).reshape(1, 3)
    q = np.asarray(q, dtype=np.float64).reshape(3)
    return float(np.linalg.norm(q - transform.apply(p)[0]))


def registration_residuals(transform: RigidTransform, points_p: np.ndarray,
                           points_q: np.ndarray) -> np.ndarray:
    """Row-wise residuals ||q_k - R p_k - t|| for (K, 3) arrays."""
    return np.linalg.norm(np.asarray(points_q, dtype=np.float64) - transform.apply(points_p), axis=1)


def tls_cost(r: float, c_bar: float) -> float:
    """
    Truncated least squares cost min(r^2, c_bar^2).

    Raises:
        ValueError: If c_bar is not positive
    """
    if not c_bar > 0:
        raise ValueError(f"c_bar must be positive, got {c_bar}")
    if abs(r) >= c_bar:
        return c_bar * c_bar
    return r * r


def transforms_close(first: RigidTransform, second: RigidTransform,
                     rotation_tol_deg: float, translation_tol: float) -> bool:
    """True when both the rotation and translation differences are strictly within tolerance."""
    return (rotation_error_deg(first.rotation, second.rotation) < rotation_tol_deg and
            translation_error(first.translation, second.translation) < translation_tol)
