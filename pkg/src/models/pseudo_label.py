"""
PseudoLabel and LoopMetrics classes for the teacher-student loop.
"""
from typing import Optional

from models.rigid_transform import RigidTransform


def _check_fraction(name: str, value: float) -> None:
    if not (0.0 <= value <= 1.0):
        raise ValueError(f"{name} must be between 0 and 1, got {value}")


def _check_percentage(name: str, value: Optional[float]) -> None:
    if value is not None and not (0.0 <= value <= 100.0):
        raise ValueError(f"{name} must be between 0% and 100%, got {value}%")


class PseudoLabel:
    """Estimated transform for one pair plus the teacher's diagnostics."""

    def __init__(self, pair_id: str, transform: RigidTransform, inlier_rate: float = 0.0,
                 overlap_ratio: float = 0.0, verified: bool = False, stable_count: int = 0,
                 skip: bool = False, has_model: bool = True):
        """
        Initialize a pseudo-label.

        Args:
            pair_id: Identifier of the registration pair
            transform: Estimated rigid transform mapping cloud A onto cloud B
            inlier_rate: Fraction of putative correspondences that are inliers (0-1)
            overlap_ratio: Fraction of A with a neighbor in B after the transform (0-1)
            verified: Whether the label passed the overlap verifier
            stable_count: Consecutive loop iterations the label stayed unchanged
            skip: Whether the label is frozen for the rest of the run
            has_model: False when the teacher could not produce a model

        Raises:
            ValueError: If a fraction is outside [0, 1] or stable_count is negative
        """
        _check_fraction("inlier_rate", inlier_rate)
        _check_fraction("overlap_ratio", overlap_ratio)
        if stable_count < 0:
            raise ValueError(f"stable_count must be nonnegative, got {stable_count}")
        self.pair_id = str(pair_id)
        self.transform = transform
        self.inlier_rate = float(inlier_rate)
        self.overlap_ratio = float(overlap_ratio)
        self.verified = bool(verified)
        self.stable_count = int(stable_count)
        self.skip = bool(skip)
        self.has_model = bool(has_model)

    @classmethod
    def no_model(cls, pair_id: str) -> 'PseudoLabel':
        """Label for a pair the teacher could not register: identity, zero overlap, never verified."""
        return cls(pair_id, RigidTransform.identity(), 0.0, 0.0, has_model=False)

    def copy(self) -> 'PseudoLabel':
        return PseudoLabel(self.pair_id, self.transform, self.inlier_rate, self.overlap_ratio,
                           self.verified, self.stable_count, self.skip, self.has_model)

    def __repr__(self) -> str:
        return (f"PseudoLabel(pair_id='{self.pair_id}', inlier_rate={self.inlier_rate:.3f}, "
                f"overlap_ratio={self.overlap_ratio:.3f}, verified={self.verified}, skip={self.skip})")


class LoopMetrics:
    """Diagnostics of one loop iteration, all in percent."""

    FIELDS = ('iteration', 'plsr', 'plir', 'train_recall', 'test_recall')

    def __init__(self, iteration: int, plsr: float, plir: Optional[float] = None,
                 train_recall: Optional[float] = None, test_recall: Optional[float] = None):
        if iteration < 0:
            raise ValueError(f"Iteration must be nonnegative, got {iteration}")
        _check_percentage("plsr", plsr)
        _check_percentage("plir", plir)
        _check_percentage("train_recall", train_recall)
        _check_percentage("test_recall", test_recall)
        self.iteration = int(iteration)
        self.plsr = float(plsr)
        self.plir = None if plir is None else float(plir)
        self.train_recall = None if train_recall is None else float(train_recall)
        self.test_recall = None if test_recall is None else float(test_recall)

    def as_row(self) -> list:
        """CSV cells; missing optional values become empty strings."""
        def cell(value):
            return '' if value is None else repr(float(value))
        return [str(self.iteration), cell(self.plsr), cell(self.plir),
                cell(self.train_recall), cell(self.test_recall)]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LoopMetrics):
            return NotImplemented
        return self.as_row() == other.as_row()

    def __repr__(self) -> str:
        return (f"LoopMetrics(iteration={self.iteration}, plsr={self.plsr:.2f}, plir={self.plir}, "
                f"train_recall={self.train_recall}, test_recall={self.test_recall})")
