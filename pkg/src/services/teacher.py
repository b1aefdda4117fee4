"""
Robust registration teacher.

Horn's closed-form alignment inside a seeded RANSAC loop, followed by
point-to-point ICP. RANSAC hypotheses are generated and scored in fixed-size
chunks but accepted in iteration order, so the result is the same as a
one-hypothesis-at-a-time loop with the same random stream.
"""
import logging
import math
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from models.correspondence import CorrespondenceSet
from models.errors import DegenerateConfigurationError, NoModelError
from models.point_cloud import PointCloud
from models.registration import IcpResult, RansacConfig, TeacherResult
from models.rigid_transform import RigidTransform
from services.geometry import registration_residuals

logger = logging.getLogger(__name__)

DEGENERACY_RATIO = 1e-12
RANSAC_CHUNK = 256
ICP_RELATIVE_TOLERANCE = 1e-6
TEACHER_KINDS = ('ransac', 'horn_direct')


def horn_solve_batch(source: np.ndarray, target: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Horn alignment of many correspondence sets at once.

    Args:
        source: (B, K, 3) points p
        target: (B, K, 3) points q

    Returns:
        (rotations (B, 3, 3), translations (B, 3), valid (B,)) where ``valid``
        is False when the second singular value of the cross-covariance is below
        1e-12 times the first
    """
    source_mean = source.mean(axis=1, keepdims=True)
    target_mean = target.mean(axis=1, keepdims=True)
    cross = np.einsum('bki,bkj->bij', source - source_mean, target - target_mean)
    u, s, vt = np.linalg.svd(cross)
    v = np.swapaxes(vt, 1, 2)
    ut = np.swapaxes(u, 1, 2)
    d = np.sign(np.linalg.det(v @ ut))
    d[d == 0] = 1.0
    correction = np.zeros_like(cross)
    correction[:, 0, 0] = 1.0
    correction[:, 1, 1] = 1.0
    correction[:, 2, 2] = d
    rotations = v @ correction @ ut
    translations = target_mean[:, 0, :] - np.einsum('bij,bj->bi', rotations, source_mean[:, 0, :])
    valid = (s[:, 0] > 0) & (s[:, 1] >= DEGENERACY_RATIO * s[:, 0])
    return rotations, translations, valid


def horn_solve(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """
    Least-squares rigid transform mapping ``source`` onto ``target``.

    Args:
        source: (K, 3) points p_k
        target: (K, 3) points q_k

    Returns:
        RigidTransform minimizing sum ||q_k - R p_k - t||^2 with det(R) = +1

    Raises:
        DegenerateConfigurationError: If K < 3 or the source points are collinear
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.ndim != 2 or source.shape[1] != 3:
        raise ValueError(f"Point sets must both have shape (K, 3), got {source.shape} and {target.shape}")
    if source.shape[0] < 3:
        raise DegenerateConfigurationError(f"Horn alignment needs at least 3 pairs, got {source.shape[0]}")
    rotations, translations, valid = horn_solve_batch(source[None], target[None])
    if not valid[0]:
        raise DegenerateConfigurationError("Degenerate configuration: source points are collinear")
    return RigidTransform(rotations[0], translations[0], validate=False)


def count_inliers(transform: RigidTransform, corrs: CorrespondenceSet, cloud_a: PointCloud,
                  cloud_b: PointCloud, threshold: float) -> Tuple[int, np.ndarray]:
    """
    Correspondences with residual strictly below ``threshold``.

    Returns:
        (count, indices into ``corrs``)
    """
    if not threshold > 0:
        raise ValueError(f"Inlier threshold must be positive, got {threshold}")
    if len(corrs) == 0:
        return 0, np.zeros(0, dtype=np.int64)
    residuals = registration_residuals(transform, cloud_a.points[corrs.index_a],
                                       cloud_b.points[corrs.index_b])
    indices = np.flatnonzero(residuals < threshold)
    return int(len(indices)), indices


def adaptive_iteration_bound(inlier_rate: float, confidence: float, max_iterations: int,
                             sample_size: int = 3) -> int:
    """
    Iterations needed to draw one all-inlier sample with probability ``confidence``.

    ceil(log(1 - confidence) / log(1 - w^s)), capped at ``max_iterations``.
    """
    if inlier_rate >= 1.0:
        return 1
    if inlier_rate <= 0.0:
        return max_iterations
    all_inlier = inlier_rate ** sample_size
    denominator = math.log1p(-all_inlier)
    if denominator == 0.0:
        return max_iterations
    bound = math.ceil(math.log1p(-confidence) / denominator)
    return int(min(max_iterations, max(1, bound)))


def sample_triplets(rng: np.random.Generator, population: int, count: int) -> np.ndarray:
    """Draw ``count`` triples of distinct indices below ``population`` without rejection."""
    first = rng.integers(0, population, size=count)
    second = rng.integers(0, population - 1, size=count)
    third = rng.integers(0, population - 2, size=count)
    second = second + (second >= first)
    low = np.minimum(first, second)
    high = np.maximum(first, second)
    third = third + (third >= low)
    third = third + (third >= high)
    return np.stack([first, second, third], axis=1)


def _score_hypotheses(rotations: np.ndarray, translations: np.ndarray, source: np.ndarray,
                      target: np.ndarray, threshold: float) -> np.ndarray:
    moved = np.einsum('bij,kj->bki', rotations, source) + translations[:, None, :]
    residuals = np.linalg.norm(moved - target[None], axis=2)
    return np.count_nonzero(residuals < threshold, axis=1)


def ransac_register(corrs: CorrespondenceSet, cloud_a: PointCloud, cloud_b: PointCloud,
                    cfg: RansacConfig, rng: Optional[np.random.Generator] = None) -> TeacherResult:
    """
    RANSAC over 3-point Horn hypotheses with adaptive stopping and a consensus refit.

    Args:
        corrs: Putative correspondences between ``cloud_a`` and ``cloud_b``
        cloud_a: Source cloud
        cloud_b: Target cloud
        cfg: RANSAC settings
        rng: Random stream; ``default_rng(cfg.seed)`` when omitted

    Returns:
        TeacherResult whose inliers all have residual below the threshold

    Raises:
        NoModelError: If there are fewer than 3 correspondences or every sample is degenerate
    """
    k = len(corrs)
    if k < 3:
        raise NoModelError(f"RANSAC needs at least 3 correspondences, got {k}")
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    source = cloud_a.points[corrs.index_a]
    target = cloud_b.points[corrs.index_b]

    best_count = -1
    best_model = None
    bound = cfg.max_iterations
    iterations_run = 0
    while iterations_run < bound:
        chunk = min(RANSAC_CHUNK, cfg.max_iterations - iterations_run)
        samples = sample_triplets(rng, k, chunk)
        rotations, translations, valid = horn_solve_batch(source[samples], target[samples])
        counts = _score_hypotheses(rotations, translations, source, target, cfg.inlier_threshold)
        for j in range(chunk):
            if iterations_run >= bound:
                break
            iterations_run += 1
            if valid[j] and counts[j] > best_count:
                best_count = int(counts[j])
                best_model = (rotations[j], translations[j])
                bound = adaptive_iteration_bound(best_count / k, cfg.confidence, cfg.max_iterations)

    if best_model is None:
        raise NoModelError(f"All {iterations_run} sampled triples were degenerate")

    transform = RigidTransform(best_model[0], best_model[1], validate=False)
    _, inliers = count_inliers(transform, corrs, cloud_a, cloud_b, cfg.inlier_threshold)
    try:
        transform = horn_solve(source[inliers], target[inliers])
        _, inliers = count_inliers(transform, corrs, cloud_a, cloud_b, cfg.inlier_threshold)
    except DegenerateConfigurationError:
        logger.debug("Consensus refit degenerate; keeping the minimal-sample model")
    return TeacherResult(transform, len(inliers) / k, inliers, iterations_run)


def horn_direct_teacher(corrs: CorrespondenceSet, cloud_a: PointCloud, cloud_b: PointCloud,
                        inlier_threshold: float) -> TeacherResult:
    """Single Horn fit over every putative correspondence (non-robust ablation)."""
    source = cloud_a.points[corrs.index_a]
    target = cloud_b.points[corrs.index_b]
    transform = horn_solve(source, target)
    _, inliers = count_inliers(transform, corrs, cloud_a, cloud_b, inlier_threshold)
    return TeacherResult(transform, len(inliers) / len(corrs), inliers, 1)


def _pairing(tree: cKDTree, moved: np.ndarray, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    distance, index = tree.query(moved, k=1, distance_upper_bound=threshold)
    mask = distance < threshold
    return mask, index


def icp_refine(initial: RigidTransform, cloud_a: PointCloud, cloud_b: PointCloud,
               max_iter: int = 50, dist_threshold: float = 0.07,
               tree: Optional[cKDTree] = None) -> IcpResult:
    """
    Point-to-point ICP from ``initial``.

    Each step pairs every transformed A point with its nearest B point within
    ``dist_threshold`` and re-solves Horn from the original A coordinates.
    Stops when the mean paired residual decreases by less than 1e-6 relative,
    or after ``max_iter`` steps. The initial transform is returned when it
    fits the final pairing set better than the result.

    Raises:
        ValueError: If a cloud is empty or the threshold is not positive
    """
    if len(cloud_a) == 0 or len(cloud_b) == 0:
        raise ValueError("ICP needs nonempty clouds")
    if not dist_threshold > 0:
        raise ValueError(f"ICP distance threshold must be positive, got {dist_threshold}")
    tree = cKDTree(cloud_b.points) if tree is None else tree
    source = cloud_a.points
    target = cloud_b.points

    mask, index = _pairing(tree, initial.apply(source), dist_threshold)
    if not mask.any():
        logger.debug("ICP: no pairs within %.3f m at the initial transform", dist_threshold)
        return IcpResult(initial, False, 0, float('inf'))

    transform = initial
    previous = float(np.mean(registration_residuals(transform, source[mask], target[index[mask]])))
    iterations = 0
    for iterations in range(1, max_iter + 1):
        try:
            candidate = horn_solve(source[mask], target[index[mask]])
        except DegenerateConfigurationError:
            break
        new_mask, new_index = _pairing(tree, candidate.apply(source), dist_threshold)
        if not new_mask.any():
            break
        transform, mask, index = candidate, new_mask, new_index
        current = float(np.mean(registration_residuals(transform, source[mask], target[index[mask]])))
        converged = previous == 0.0 or (previous - current) / previous < ICP_RELATIVE_TOLERANCE
        previous = current
        if converged:
            break

    paired_source, paired_target = source[mask], target[index[mask]]
    final_residual = float(np.mean(registration_residuals(transform, paired_source, paired_target)))
    initial_residual = float(np.mean(registration_residuals(initial, paired_source, paired_target)))
    if initial_residual < final_residual:
        return IcpResult(initial, True, iterations, initial_residual)
    return IcpResult(transform, True, iterations, final_residual)


def estimate_transform(corrs: CorrespondenceSet, cloud_a: PointCloud, cloud_b: PointCloud,
                       ransac_cfg: RansacConfig, teacher: str = 'ransac',
                       icp_max_iterations: int = 50, icp_threshold: Optional[float] = None,
                       rng: Optional[np.random.Generator] = None) -> TeacherResult:
    """
    Full teacher: robust estimate followed by ICP refinement.

    The reported inliers are recomputed under the refined transform.

    Raises:
        NoModelError: If no model can be produced from ``corrs``
    """
    if teacher not in TEACHER_KINDS:
        raise ValueError(f"Unknown teacher '{teacher}', expected one of {TEACHER_KINDS}")
    if teacher == 'ransac':
        coarse = ransac_register(corrs, cloud_a, cloud_b, ransac_cfg, rng)
    else:
        if len(corrs) < 3:
            raise NoModelError(f"Horn alignment needs at least 3 correspondences, got {len(corrs)}")
        try:
            coarse = horn_direct_teacher(corrs, cloud_a, cloud_b, ransac_cfg.inlier_threshold)
        except DegenerateConfigurationError as e:
            raise NoModelError(str(e))
    if icp_max_iterations <= 0:
        return coarse
    threshold = ransac_cfg.inlier_threshold if icp_threshold is None else icp_threshold
    refined = icp_refine(coarse.transform, cloud_a, cloud_b, icp_max_iterations, threshold)
    _, inliers = count_inliers(refined.transform, corrs, cloud_a, cloud_b, ransac_cfg.inlier_threshold)
    return TeacherResult(refined.transform, len(inliers) / len(corrs), inliers, coarse.iterations_run)
