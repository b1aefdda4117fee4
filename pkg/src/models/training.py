"""
Loss, optimizer and batch types of the student descriptor.
"""
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from models.rigid_transform import RigidTransform

# Largest distance between two unit vectors
UNIT_SPHERE_DIAMETER = 2.0


@dataclass(frozen=True)
class LossConfig:
    """Margins and weights of the contrastive + triplet objective (slacks fixed at zero)."""
    m_p: float = 0.1
    m_n: float = 1.4
    m: float = 0.5
    lambda_p: float = 1.0
    lambda_n: float = 1.0
    lambda_triplet: float = 1.0
    negatives_per_anchor: int = 4

    def __post_init__(self):
        if not (self.m_n > self.m_p >= 0.0):
            raise ValueError(f"Margins must satisfy m_n > m_p >= 0, got m_p={self.m_p}, m_n={self.m_n}")
        if self.m < 0:
            raise ValueError(f"Triplet margin must be nonnegative, got {self.m}")
        weights = (self.lambda_p, self.lambda_n, self.lambda_triplet)
        if min(weights) < 0:
            raise ValueError(f"Loss weights must be nonnegative, got {weights}")
        if max(weights) <= 0:
            raise ValueError("At least one loss weight must be positive")
        if self.negatives_per_anchor < 1:
            raise ValueError(f"negatives_per_anchor must be at least 1, got {self.negatives_per_anchor}")

    def check_unit_sphere(self) -> None:
        """Reject a negative margin no pair of unit embeddings can satisfy."""
        if self.m_n > UNIT_SPHERE_DIAMETER:
            raise ValueError(
                f"m_n={self.m_n} exceeds {UNIT_SPHERE_DIAMETER}, the largest distance between unit embeddings")


@dataclass(frozen=True)
class OptimizerConfig:
    """Plain SGD with optional momentum; one pair's anchors form a mini-batch."""
    learning_rate: float = 0.05
    momentum: float = 0.9
    anchors_per_pair: Optional[int] = 256

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.anchors_per_pair is not None and self.anchors_per_pair < 1:
            raise ValueError(f"anchors_per_pair must be at least 1, got {self.anchors_per_pair}")


class TrainingBatch:
    """
    Anchors, positives and negatives expressed as row indices.

    ``anchors`` index cloud A, ``positives`` index cloud B, and ``negatives`` is an
    (anchors, negatives_per_anchor) index array into cloud B. Histograms are
    looked up from ``inputs_a``/``inputs_b`` when the batch is evaluated.
    """

    def __init__(self, inputs_a: np.ndarray, inputs_b: np.ndarray, anchors: np.ndarray,
                 positives: np.ndarray, negatives: np.ndarray):
        anchors = np.asarray(anchors, dtype=np.int64).reshape(-1)
        positives = np.asarray(positives, dtype=np.int64).reshape(-1)
        negatives = np.asarray(negatives, dtype=np.int64)
        if anchors.shape != positives.shape:
            raise ValueError("anchors and positives must have equal length")
        if negatives.ndim != 2 or negatives.shape[0] != anchors.shape[0]:
            raise ValueError(f"negatives must have shape ({anchors.shape[0]}, n), got {negatives.shape}")
        if len(anchors) and negatives.shape[1] < 1:
            raise ValueError("Every anchor needs at least one negative")
        self.inputs_a = inputs_a
        self.inputs_b = inputs_b
        self.anchors = anchors
        self.positives = positives
        self.negatives = negatives

    @property
    def anchor_inputs(self) -> np.ndarray:
        return self.inputs_a[self.anchors]

    @property
    def positive_inputs(self) -> np.ndarray:
        return self.inputs_b[self.positives]

    @property
    def negative_inputs(self) -> np.ndarray:
        """(anchors, negatives_per_anchor, input_dim) histograms."""
        return self.inputs_b[self.negatives]

    def __len__(self) -> int:
        return int(self.anchors.shape[0])

    def __repr__(self) -> str:
        return f"TrainingBatch(anchors={len(self)}, negatives_per_anchor={self.negatives.shape[1]})"


@dataclass
class SupervisedPair:
    """
    A verified pair as the student sees it.

    ``anchors``/``positives`` are the label-induced matches, computed once;
    ``moved_anchors`` are the anchor points after applying the label, used to
    resample negatives every epoch.
    """
    pair_id: str
    points_b: np.ndarray = field(repr=False)
    inputs_a: np.ndarray = field(repr=False)
    inputs_b: np.ndarray = field(repr=False)
    label: RigidTransform
    anchors: np.ndarray = field(repr=False)
    positives: np.ndarray = field(repr=False)
    moved_anchors: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return int(len(self.anchors))


@dataclass
class TrainingReport:
    """Per-epoch mean losses and the ids of the pairs the student consumed."""
    epoch_losses: List[float] = field(default_factory=list)
    consumed_pair_ids: List[str] = field(default_factory=list)
    skipped_pair_ids: List[str] = field(default_factory=list)

    @property
    def final_loss(self) -> Optional[float]:
        return self.epoch_losses[-1] if self.epoch_losses else None
