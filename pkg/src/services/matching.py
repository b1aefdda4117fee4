"""
Nearest-neighbor correspondences in descriptor space.

Low-dimensional descriptors are searched with ``scipy.spatial.cKDTree``;
above ``KD_TREE_MAX_DIM`` an exact chunked brute force is used. Exact distance
ties always resolve to the lowest target index.
"""
import logging
from typing import Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from models.correspondence import CorrespondenceSet
from models.errors import NoModelError

logger = logging.getLogger(__name__)

KD_TREE_MAX_DIM = 16
KD_TREE_CANDIDATES = 4
BRUTE_FORCE_BLOCK = 4_000_000


def _as_descriptors(name: str, desc: np.ndarray) -> np.ndarray:
    desc = np.asarray(desc, dtype=np.float64)
    if desc.ndim == 1:
        desc = desc.reshape(-1, 1)
    if desc.ndim != 2 or desc.shape[0] == 0:
        raise ValueError(f"{name} must be a nonempty (N, D) array, got shape {desc.shape}")
    return desc


def _check_pair(desc_a: np.ndarray, desc_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    desc_a = _as_descriptors("desc_a", desc_a)
    desc_b = _as_descriptors("desc_b", desc_b)
    if desc_a.shape[1] != desc_b.shape[1]:
        raise ValueError(f"Descriptor dimension mismatch: {desc_a.shape[1]} vs {desc_b.shape[1]}")
    return desc_a, desc_b


def _brute_force_two(desc_a: np.ndarray, desc_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Nearest index, nearest distance and second-nearest distance by exhaustive search."""
    n_a, n_b = desc_a.shape[0], desc_b.shape[0]
    chunk = max(1, BRUTE_FORCE_BLOCK // max(1, n_b * desc_a.shape[1]))
    nearest = np.empty(n_a, dtype=np.int64)
    d1 = np.empty(n_a)
    d2 = np.full(n_a, np.inf)
    for start in range(0, n_a, chunk):
        block = desc_a[start:start + chunk]
        diff = block[:, None, :] - desc_b[None, :, :]
        dist = np.sqrt(np.einsum('abd,abd->ab', diff, diff))
        idx = np.argmin(dist, axis=1)
        rows = np.arange(block.shape[0])
        nearest[start:start + chunk] = idx
        d1[start:start + chunk] = dist[rows, idx]
        if n_b > 1:
            dist[rows, idx] = np.inf
            d2[start:start + chunk] = dist.min(axis=1)
    return nearest, d1, d2


def _kd_tree_two(desc_a: np.ndarray, desc_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Same contract as the brute force, using a k-d tree over ``desc_b``."""
    k = min(KD_TREE_CANDIDATES, desc_b.shape[0])
    dist, idx = cKDTree(desc_b).query(desc_a, k=k)
    if k == 1:
        dist, idx = dist[:, None], idx[:, None]
    # lowest index among the exact-minimum candidates
    tied = dist == dist[:, :1]
    masked = np.where(tied, idx, np.iinfo(np.int64).max)
    nearest = masked.min(axis=1).astype(np.int64)
    d1 = np.linalg.norm(desc_a - desc_b[nearest], axis=1)
    if k > 1:
        d2 = np.where(tied.sum(axis=1) > 1, dist[:, 0], dist[:, 1])
    else:
        d2 = np.full(desc_a.shape[0], np.inf)
    # every candidate tied: the lowest tied index may not have been returned
    if k < desc_b.shape[0]:
        saturated = np.flatnonzero(tied[:, -1])
        if saturated.size:
            logger.debug("Resolving %d saturated ties by exhaustive search", saturated.size)
            nearest[saturated], d1[saturated], d2[saturated] = _brute_force_two(desc_a[saturated], desc_b)
    return nearest, d1, d2


def nearest_two(desc_a: np.ndarray, desc_b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    For every row of ``desc_a``: nearest row of ``desc_b``, its distance and the
    second-nearest distance (``inf`` when ``desc_b`` has one row).
    """
    desc_a, desc_b = _check_pair(desc_a, desc_b)
    if desc_a.shape[1] <= KD_TREE_MAX_DIM:
        return _kd_tree_two(desc_a, desc_b)
    return _brute_force_two(desc_a, desc_b)


def _apply_exclusions(desc_b: np.ndarray, exclude_b: Optional[np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    index_map = np.arange(desc_b.shape[0])
    if exclude_b is not None:
        index_map = index_map[~np.asarray(exclude_b, dtype=bool)]
    return desc_b[index_map], index_map


def match_nn(desc_a: np.ndarray, desc_b: np.ndarray, exclude_a: Optional[np.ndarray] = None,
             exclude_b: Optional[np.ndarray] = None) -> CorrespondenceSet:
    """
    Pair every non-excluded row of ``desc_a`` with its nearest row of ``desc_b``.

    Args:
        desc_a: (N, D) query descriptors
        desc_b: (M, D) target descriptors
        exclude_a: Optional mask of query rows to skip
        exclude_b: Optional mask of target rows that may not be matched

    Returns:
        CorrespondenceSet ordered by index_a; ties go to the lowest index_b

    Raises:
        ValueError: On dimension mismatch or empty inputs
    """
    desc_a, desc_b = _check_pair(desc_a, desc_b)
    queries = np.arange(desc_a.shape[0])
    if exclude_a is not None:
        queries = queries[~np.asarray(exclude_a, dtype=bool)]
    targets, index_map = _apply_exclusions(desc_b, exclude_b)
    if len(queries) == 0 or len(targets) == 0:
        return CorrespondenceSet.empty()
    nearest, d1, _ = nearest_two(desc_a[queries], targets)
    return CorrespondenceSet(queries, index_map[nearest], d1)


def cross_check(matches_ab: CorrespondenceSet, matches_ba: CorrespondenceSet) -> CorrespondenceSet:
    """
    Keep the mutual nearest neighbors.

    ``matches_ba`` is the reverse search: its ``index_a`` indexes B and its
    ``index_b`` indexes A. A pair (k, j) of ``matches_ab`` survives when
    ``matches_ba`` maps j back to k.
    """
    if len(matches_ab) == 0 or len(matches_ba) == 0:
        return CorrespondenceSet.empty()
    size = int(max(matches_ab.index_b.max(), matches_ba.index_a.max())) + 1
    back = np.full(size, -1, dtype=np.int64)
    back[matches_ba.index_a] = matches_ba.index_b
    keep = back[matches_ab.index_b] == matches_ab.index_a
    return matches_ab.subset(keep)


def ratio_test(desc_a: np.ndarray, desc_b: np.ndarray, zeta: float,
               exclude_a: Optional[np.ndarray] = None,
               exclude_b: Optional[np.ndarray] = None) -> CorrespondenceSet:
    """
    Nearest-neighbor matches whose nearest/second-nearest distance ratio is below ``zeta``.

    Raises:
        ValueError: If zeta is outside (0, 1)
        NoModelError: If fewer than two target rows remain
    """
    if not (0.0 < zeta < 1.0):
        raise ValueError(f"Ratio test threshold must be in (0, 1), got {zeta}")
    desc_a, desc_b = _check_pair(desc_a, desc_b)
    queries = np.arange(desc_a.shape[0])
    if exclude_a is not None:
        queries = queries[~np.asarray(exclude_a, dtype=bool)]
    targets, index_map = _apply_exclusions(desc_b, exclude_b)
    if len(targets) < 2:
        raise NoModelError(f"Ratio test needs at least 2 target descriptors, got {len(targets)}")
    if len(queries) == 0:
        return CorrespondenceSet.empty()
    nearest, d1, d2 = nearest_two(desc_a[queries], targets)
    positive = d2 > 0
    ratio = np.divide(d1, d2, out=np.ones_like(d1), where=positive)
    keep = positive & (ratio < zeta)
    return CorrespondenceSet(queries[keep], index_map[nearest[keep]], d1[keep])


def putative_correspondences(desc_a: np.ndarray, desc_b: np.ndarray, mutual: bool = True,
                             zeta: float = 0.0, exclude_a: Optional[np.ndarray] = None,
                             exclude_b: Optional[np.ndarray] = None) -> CorrespondenceSet:
    """
    Correspondence function of the pipeline: nearest neighbors, optionally
    ratio-filtered (``zeta`` > 0), optionally cross-checked.
    """
    if zeta > 0:
        forward = ratio_test(desc_a, desc_b, zeta, exclude_a, exclude_b)
    else:
        forward = match_nn(desc_a, desc_b, exclude_a, exclude_b)
    if not mutual:
        return forward
    backward = match_nn(desc_b, desc_a, exclude_b, exclude_a)
    result = cross_check(forward, backward)
    logger.debug("Matching: %d forward, %d mutual", len(forward), len(result))
    return result
