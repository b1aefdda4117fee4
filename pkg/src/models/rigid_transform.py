"""
RigidTransform class for elements of SO(3) x R^3.
"""
from typing import Iterable, List, Optional, Sequence

import numpy as np

ORTHOGONALITY_TOLERANCE = 1e-9


def _freeze(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.float64)
    array.setflags(write=False)
    return array


def polar_orthonormalize(rotation: np.ndarray) -> np.ndarray:
    """Closest proper rotation to ``rotation`` (polar decomposition via SVD)."""
    u, _, vt = np.linalg.svd(rotation)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    return u @ np.diag([1.0, 1.0, d]) @ vt


class RigidTransform:
    """Immutable rigid motion p' = R p + t (rotation unitless, translation in meters)."""

    __slots__ = ('rotation', 'translation')

    def __init__(self, rotation: Optional[np.ndarray] = None,
                 translation: Optional[Sequence[float]] = None,
                 validate: bool = True):
        """
        Initialize a rigid transform.

        Args:
            rotation: 3x3 proper rotation matrix (identity when omitted)
            translation: 3-vector in meters (zero when omitted)
            validate: Check the SO(3) invariants

        Raises:
            ValueError: If shapes are wrong, entries are non-finite, or R is not a proper rotation
        """
        rotation = np.eye(3) if rotation is None else np.asarray(rotation, dtype=np.float64)
        translation = np.zeros(3) if translation is None else np.asarray(translation, dtype=np.float64)
        if rotation.shape != (3, 3):
            raise ValueError(f"Rotation must be 3x3, got shape {rotation.shape}")
        translation = translation.reshape(-1)
        if translation.shape != (3,):
            raise ValueError(f"Translation must be a 3-vector, got shape {translation.shape}")
        if validate:
            self._validate(rotation, translation)
        self.rotation = _freeze(rotation)
        self.translation = _freeze(translation)

    @staticmethod
    def _validate(rotation: np.ndarray, translation: np.ndarray) -> None:
        if not (np.all(np.isfinite(rotation)) and np.all(np.isfinite(translation))):
            raise ValueError("Rigid transform entries must be finite")
        drift = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
        if drift > ORTHOGONALITY_TOLERANCE:
            raise ValueError(f"Rotation is not orthonormal (max |R^T R - I| = {drift:.3e})")
        det = np.linalg.det(rotation)
        if abs(det - 1.0) > ORTHOGONALITY_TOLERANCE:
            raise ValueError(f"Rotation must have det +1, got {det:.12f}")

    @classmethod
    def identity(cls) -> 'RigidTransform':
        """The identity motion."""
        return cls(np.eye(3), np.zeros(3), validate=False)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> 'RigidTransform':
        """Build from a 4x4 homogeneous matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise ValueError(f"Homogeneous matrix must be 4x4, got shape {matrix.shape}")
        return cls(matrix[:3, :3], matrix[:3, 3])

    @classmethod
    def from_axis_angle(cls, axis: Sequence[float], angle_deg: float,
                        translation: Optional[Sequence[float]] = None) -> 'RigidTransform':
        """
        Build a rotation about ``axis`` by ``angle_deg`` degrees (Rodrigues formula).

        Args:
            axis: Rotation axis (normalized internally)
            angle_deg: Rotation angle in degrees
            translation: Optional translation in meters
        """
        axis = np.asarray(axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if norm == 0:
            raise ValueError("Rotation axis must be nonzero")
        k = axis / norm
        theta = np.deg2rad(angle_deg)
        K = np.array([[0.0, -k[2], k[1]],
                      [k[2], 0.0, -k[0]],
                      [-k[1], k[0], 0.0]])
        rotation = np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)
        return cls(rotation, translation)

    @classmethod
    def from_row(cls, values: Iterable[float]) -> 'RigidTransform':
        """Build from 12 values: R row-major followed by t."""
        values = np.asarray(list(values), dtype=np.float64)
        if values.shape != (12,):
            raise ValueError(f"Expected 12 transform entries, got {values.size}")
        return cls(values[:9].reshape(3, 3), values[9:])

    def to_row(self) -> List[float]:
        """Return the 12 entries: R row-major followed by t."""
        return [float(v) for v in self.rotation.reshape(-1)] + [float(v) for v in self.translation]

    def as_matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix."""
        matrix = np.eye(4)
        matrix[:3, :3] = self.rotation
        matrix[:3, 3] = self.translation
        return matrix

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to an (N, 3) array of points."""
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation

    def rotate(self, vectors: np.ndarray) -> np.ndarray:
        """Rotate an (N, 3) array of direction vectors."""
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def compose(self, first: 'RigidTransform') -> 'RigidTransform':
        """
        Return ``self o first``: apply ``first`` then ``self``.

        Re-orthonormalizes when the product drifts past the orthogonality tolerance.
        """
        rotation = self.rotation @ first.rotation
        translation = self.rotation @ first.translation + self.translation
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > 0.1 * ORTHOGONALITY_TOLERANCE:
            rotation = polar_orthonormalize(rotation)
        return RigidTransform(rotation, translation, validate=False)

    def inverse(self) -> 'RigidTransform':
        """R' = R^T, t' = -R^T t."""
        rotation = self.rotation.T
        return RigidTransform(rotation, -rotation @ self.translation, validate=False)

    def allclose(self, other: 'RigidTransform', atol: float = 1e-9) -> bool:
        """Entrywise comparison of rotation and translation."""
        return (np.allclose(self.rotation, other.rotation, rtol=0.0, atol=atol) and
                np.allclose(self.translation, other.translation, rtol=0.0, atol=atol))

    def __repr__(self) -> str:
        t = ', '.join(f"{v:.4f}" for v in self.translation)
        return f"RigidTransform(translation=({t}))"
