"""
Configuration and result types of the robust registration teacher.
"""
from dataclasses import dataclass, field

import numpy as np

from models.rigid_transform import RigidTransform

SAMPLE_SIZE = 3


@dataclass(frozen=True)
class RansacConfig:
    """RANSAC settings; ``inlier_threshold`` is the residual bound c_bar in meters."""
    max_iterations: int = 10000
    confidence: float = 0.999
    inlier_threshold: float = 0.07
    sample_size: int = SAMPLE_SIZE
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not (0.0 < self.confidence < 1.0):
            raise ValueError(f"confidence must be in (0, 1), got {self.confidence}")
        if not self.inlier_threshold > 0:
            raise ValueError(f"inlier_threshold must be positive, got {self.inlier_threshold}")
        if self.sample_size != SAMPLE_SIZE:
            raise ValueError(f"sample_size is fixed at {SAMPLE_SIZE}, got {self.sample_size}")


@dataclass(frozen=True)
class TeacherResult:
    """Transform estimated from putative correspondences, with its consensus set."""
    transform: RigidTransform
    inlier_rate: float
    inlier_indices: np.ndarray = field(repr=False)
    iterations_run: int

    @property
    def inlier_count(self) -> int:
        return int(len(self.inlier_indices))


@dataclass(frozen=True)
class IcpResult:
    """Outcome of ICP refinement; ``refined`` is False when nothing paired at the start."""
    transform: RigidTransform
    refined: bool
    iterations: int
    mean_residual: float
