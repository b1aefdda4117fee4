"""
Synthetic dataset types and the ground-truth access audit.

Ground-truth transforms travel with every pair but may only be read inside an
``evaluation_scope``. Any other read is recorded as a violation and raises
``GroundTruthAccessError``, which keeps the training path self-supervised.
"""
import threading
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

from models.errors import GroundTruthAccessError
from models.point_cloud import PointCloud
from models.rigid_transform import RigidTransform

EVALUATION_SCOPES = ('evaluate', 'plir', 'recall', 'datagen')
# primitives must fit between 1 m and 5 m depth
MAX_PRIMITIVE_SIZE = 2.0

_active_scope: ContextVar[Optional[str]] = ContextVar('ground_truth_scope', default=None)


class GroundTruthAudit:
    """Records every ground-truth read with the scope it happened in."""

    def __init__(self):
        self._lock = threading.Lock()
        self.reads: List[Tuple[str, str]] = []
        self.violations: List[str] = []

    @contextmanager
    def evaluation_scope(self, name: str) -> Iterator[None]:
        """Allow ground-truth reads for the duration of the block."""
        if name not in EVALUATION_SCOPES:
            raise ValueError(f"Unknown evaluation scope '{name}', expected one of {EVALUATION_SCOPES}")
        token = _active_scope.set(name)
        try:
            yield
        finally:
            _active_scope.reset(token)

    def record_read(self, pair_id: str) -> None:
        scope = _active_scope.get()
        with self._lock:
            if scope is None:
                self.violations.append(pair_id)
            else:
                self.reads.append((scope, pair_id))
        if scope is None:
            raise GroundTruthAccessError(
                f"Ground truth of pair '{pair_id}' read outside an evaluation path")

    @property
    def violation_count(self) -> int:
        with self._lock:
            return len(self.violations)

    def reset(self) -> None:
        with self._lock:
            self.reads.clear()
            self.violations.clear()


ground_truth_audit = GroundTruthAudit()


@dataclass(frozen=True)
class SceneSpec:
    """Primitive mix of a synthetic scene. Sizes are (min, max) in meters."""
    seed: int = 0
    planes: int = 2
    spheres: int = 2
    cylinders: int = 2
    boxes: int = 2
    size_range: Tuple[float, float] = (0.3, 1.2)
    points_per_scene: int = 4000

    def __post_init__(self):
        if self.points_per_scene < 500:
            raise ValueError(f"points_per_scene must be at least 500, got {self.points_per_scene}")
        low, high = self.size_range
        if not (0 < low <= high <= MAX_PRIMITIVE_SIZE):
            raise ValueError(
                f"size_range must satisfy 0 < min <= max <= {MAX_PRIMITIVE_SIZE}, got {self.size_range}")
        counts = (self.planes, self.spheres, self.cylinders, self.boxes)
        if min(counts) < 0 or sum(counts) == 0:
            raise ValueError(f"Primitive counts must be nonnegative with at least one primitive, got {counts}")


@dataclass(frozen=True)
class PairSpec:
    """How a fragment pair is cut from a scene and perturbed."""
    rotation_deg: Tuple[float, float] = (5.0, 30.0)
    translation: Tuple[float, float] = (0.1, 0.5)
    overlap: float = 0.6
    noise_sigma: float = 0.005
    clutter_fraction: float = 0.1

    def __post_init__(self):
        if not (0.0 < self.overlap <= 1.0):
            raise ValueError(f"overlap must be in (0, 1], got {self.overlap}")
        if not (0.0 <= self.clutter_fraction < 1.0):
            raise ValueError(f"clutter_fraction must be in [0, 1), got {self.clutter_fraction}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be nonnegative, got {self.noise_sigma}")
        for name, (low, high) in (('rotation_deg', self.rotation_deg), ('translation', self.translation)):
            if not (0 <= low <= high):
                raise ValueError(f"{name} range must satisfy 0 <= min <= max, got {(low, high)}")
        if self.rotation_deg[1] > 180.0:
            raise ValueError(f"rotation_deg cannot exceed 180, got {self.rotation_deg[1]}")


class RegistrationPair:
    """Two overlapping fragments; the ground truth maps cloud A onto cloud B."""

    def __init__(self, pair_id: str, cloud_a: PointCloud, cloud_b: PointCloud,
                 ground_truth: Optional[RigidTransform] = None,
                 achieved_overlap: Optional[float] = None,
                 audit: GroundTruthAudit = None):
        self.pair_id = str(pair_id)
        self.cloud_a = cloud_a
        self.cloud_b = cloud_b
        self._ground_truth = ground_truth
        self.achieved_overlap = achieved_overlap
        self._audit = audit if audit is not None else ground_truth_audit

    @property
    def has_ground_truth(self) -> bool:
        return self._ground_truth is not None

    @property
    def ground_truth(self) -> RigidTransform:
        """
        Hidden transform, readable only inside an evaluation scope.

        Raises:
            GroundTruthAccessError: If read outside an evaluation scope
            ValueError: If the pair carries no ground truth
        """
        self._audit.record_read(self.pair_id)
        if self._ground_truth is None:
            raise ValueError(f"Pair '{self.pair_id}' has no ground truth")
        return self._ground_truth

    def __repr__(self) -> str:
        return (f"RegistrationPair(pair_id='{self.pair_id}', points_a={len(self.cloud_a)}, "
                f"points_b={len(self.cloud_b)})")


class PairDataset:
    """Train, test and optional validation splits of registration pairs."""

    def __init__(self, train: List[RegistrationPair], test: List[RegistrationPair],
                 validation: Optional[List[RegistrationPair]] = None):
        self.train = list(train)
        self.test = list(test)
        self.validation = list(validation) if validation else []
        ids = [p.pair_id for p in self.all_pairs()]
        if len(ids) != len(set(ids)):
            raise ValueError("Pair ids must be unique across splits")

    def all_pairs(self) -> List[RegistrationPair]:
        return self.train + self.test + self.validation

    def exchanged(self) -> 'PairDataset':
        """Swap the training and test splits."""
        return PairDataset(self.test, self.train, self.validation)

    def __len__(self) -> int:
        return len(self.all_pairs())

    def __repr__(self) -> str:
        return (f"PairDataset(train={len(self.train)}, test={len(self.test)}, "
                f"validation={len(self.validation)})")
