"""
SgpState and SgpResult classes carrying the teacher-student loop state.
"""
from dataclasses import dataclass, field
from typing import List, Optional

from models.mlp_descriptor import MlpDescriptor
from models.pseudo_label import LoopMetrics, PseudoLabel
from models.training import TrainingReport


@dataclass
class SgpState:
    """Loop state after ``iteration``: one label per training pair."""
    iteration: int
    model: MlpDescriptor
    labels: List[PseudoLabel]
    metrics: List[LoopMetrics] = field(default_factory=list)

    def __post_init__(self):
        if self.iteration < 0:
            raise ValueError(f"Iteration must be nonnegative, got {self.iteration}")

    @property
    def skipped_count(self) -> int:
        return sum(1 for label in self.labels if label.skip)


@dataclass
class SgpResult:
    """
    Outcome of ``SgpController.run_sgp``.

    ``model`` is the final student, or the best one on the validation split
    when a validation split was given (``best_iteration`` names it).
    ``consumed_pair_ids[t - 1]`` lists the pairs the student read at iteration t.
    """
    model: MlpDescriptor
    labels: List[PseudoLabel]
    metrics: List[LoopMetrics]
    bootstrap_labels: List[PseudoLabel]
    bootstrap_metrics: LoopMetrics
    best_iteration: int
    consumed_pair_ids: List[List[str]] = field(default_factory=list)
    reports: List[Optional[TrainingReport]] = field(default_factory=list)
    validation_recalls: List[float] = field(default_factory=list)

    @property
    def final_metrics(self) -> LoopMetrics:
        return self.metrics[-1] if self.metrics else self.bootstrap_metrics
