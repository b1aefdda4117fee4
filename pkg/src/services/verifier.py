"""
Pseudo-label verification and loop diagnostics.

The overlap verifier decides which labels supervise the student. PLIR and
recall compare against hidden ground truth and are only ever computed after
the fact; ``read_ground_truth`` is the sanctioned way to obtain it.
"""
import logging
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

from models.dataset import RegistrationPair, ground_truth_audit
from models.point_cloud import PointCloud
from models.pseudo_label import PseudoLabel
from models.rigid_transform import RigidTransform
from services.geometry import rotation_error_deg, translation_error

logger = logging.getLogger(__name__)

SUCCESS_ROTATION_DEG = 15.0
SUCCESS_TRANSLATION = 0.30


def overlap_ratio(transform: RigidTransform, cloud_a: PointCloud, cloud_b: PointCloud, tau: float,
                  tree_b: Optional[cKDTree] = None) -> float:
    """
    Fraction of A points whose transformed position has a B neighbor closer than ``tau``.

    Raises:
        ValueError: If tau is not positive or a cloud is empty
    """
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise ValueError("overlap_ratio needs nonempty clouds")
    tree_b = cKDTree(cloud_b.points) if tree_b is None else tree_b
    distance, _ = tree_b.query(transform.apply(cloud_a.points), k=1, distance_upper_bound=tau)
    return float(np.count_nonzero(distance < tau)) / len(cloud_a)


def verify_labels(labels: Sequence[PseudoLabel], eta: float, enabled: bool = True) -> List[int]:
    """
    Indices of labels whose overlap ratio reaches ``eta`` (inclusive).

    Updates each label's ``verified`` flag. With ``enabled`` False every label
    passes; otherwise labels without a model never pass.

    Raises:
        ValueError: If eta is outside [0, 1]
    """
    if not (0.0 <= eta <= 1.0):
        raise ValueError(f"eta must be between 0 and 1, got {eta}")
    survivors = []
    for index, label in enumerate(labels):
        passed = (not enabled) or (label.has_model and label.overlap_ratio >= eta)
        label.verified = passed
        if passed:
            survivors.append(index)
    return survivors


def plsr(survivors: Sequence[int], total: int) -> float:
    """Pseudo-label survival rate |S| / M in percent."""
    if total <= 0:
        raise ValueError(f"Total pair count must be positive, got {total}")
    if len(survivors) > total:
        raise ValueError(f"Survivor count {len(survivors)} exceeds total {total}")
    return 100.0 * len(survivors) / total


def label_correct(label: RigidTransform, truth: RigidTransform,
                  rot_tol_deg: float = SUCCESS_ROTATION_DEG,
                  trans_tol: float = SUCCESS_TRANSLATION) -> bool:
    """Strictly within both the rotation and the translation tolerance."""
    return (rotation_error_deg(label.rotation, truth.rotation) < rot_tol_deg and
            translation_error(label.translation, truth.translation) < trans_tol)


def plir(survivors: Sequence[int], labels: Sequence[PseudoLabel], ground_truth: Sequence[RigidTransform],
         rot_tol_deg: float = SUCCESS_ROTATION_DEG, trans_tol: float = SUCCESS_TRANSLATION) -> float:
    """
    Percentage of verified labels that are correct.

    Raises:
        ValueError: If ``survivors`` is empty
    """
    if len(survivors) == 0:
        raise ValueError("PLIR is undefined for an empty verified set")
    correct = sum(1 for i in survivors
                  if labels[i].has_model and label_correct(labels[i].transform, ground_truth[i],
                                                           rot_tol_deg, trans_tol))
    return 100.0 * correct / len(survivors)


def recall(estimates: Sequence[Optional[RigidTransform]], ground_truth: Sequence[RigidTransform],
           rot_tol_deg: float = SUCCESS_ROTATION_DEG, trans_tol: float = SUCCESS_TRANSLATION) -> float:
    """
    Percentage of all pairs registered within tolerance; ``None`` estimates count as failures.

    Raises:
        ValueError: If the sequences differ in length or are empty
    """
    if len(estimates) != len(ground_truth):
        raise ValueError(f"Got {len(estimates)} estimates for {len(ground_truth)} ground truths")
    if len(estimates) == 0:
        raise ValueError("Recall is undefined for zero pairs")
    correct = sum(1 for estimate, truth in zip(estimates, ground_truth)
                  if estimate is not None and label_correct(estimate, truth, rot_tol_deg, trans_tol))
    return 100.0 * correct / len(estimates)


def label_estimates(labels: Sequence[PseudoLabel]) -> List[Optional[RigidTransform]]:
    """Label transforms, with ``None`` for labels that carry no model."""
    return [label.transform if label.has_model else None for label in labels]


def read_ground_truth(pairs: Sequence[RegistrationPair], scope: str) -> List[RigidTransform]:
    """Read hidden transforms inside the named evaluation scope."""
    with ground_truth_audit.evaluation_scope(scope):
        return [pair.ground_truth for pair in pairs]


def check_plir_expectation(history: Dict[str, int], plir_value: Optional[float],
                           recall_value: Optional[float], alarm_after: int = 3) -> None:
    """
    Log when PLIR falls below recall; escalate after ``alarm_after`` consecutive times.

    ``history`` carries the running streak between iterations.
    """
    if plir_value is None or recall_value is None:
        return
    if plir_value >= recall_value:
        history['streak'] = 0
        return
    history['streak'] = history.get('streak', 0) + 1
    if history['streak'] >= alarm_after:
        logger.error("PLIR %.2f%% below train recall %.2f%% for %d consecutive iterations",
                     plir_value, recall_value, history['streak'])
    else:
        logger.warning("PLIR %.2f%% below train recall %.2f%%", plir_value, recall_value)
