"""
Hand-crafted bootstrap descriptor.

Voxel downsampling (the dense detector), k-nearest-neighbor normal estimation
and 33-bin Fast Point Feature Histograms built from Darboux-frame angle
triplets. Neighborhood searches use ``scipy.spatial.cKDTree``.
"""
import logging
from typing import Tuple

import numpy as np
from scipy.sparse import csr_matrix
from scipy.spatial import cKDTree

from models.errors import NoModelError
from models.point_cloud import PointCloud

logger = logging.getLogger(__name__)

BINS_PER_FEATURE = 11
FPFH_DIM = 3 * BINS_PER_FEATURE
HISTOGRAM_TOTAL = 100.0
DEFAULT_NORMAL_K = 30
ORIENTATION_TIE_TOLERANCE = 1e-9


def voxel_downsample(cloud: PointCloud, voxel: float) -> PointCloud:
    """
    Replace the points of every occupied voxel by their centroid.

    Args:
        cloud: Input cloud (normals and descriptors are not carried over)
        voxel: Voxel edge length in meters

    Returns:
        PointCloud with one point per occupied voxel, ordered by voxel key

    Raises:
        ValueError: If voxel is not positive
    """
    if not voxel > 0:
        raise ValueError(f"Voxel size must be positive, got {voxel}")
    points = cloud.points
    if len(points) == 0:
        return PointCloud(points)
    keys = np.floor(points / voxel).astype(np.int64)
    _, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    n_voxels = counts.shape[0]
    centroids = np.empty((n_voxels, 3))
    for axis in range(3):
        centroids[:, axis] = np.bincount(inverse, weights=points[:, axis], minlength=n_voxels)
    centroids /= counts[:, None]
    return PointCloud(centroids)


def estimate_normals_with_flags(cloud: PointCloud, k: int = DEFAULT_NORMAL_K) -> Tuple[PointCloud, np.ndarray]:
    """
    Estimate unit normals from k-nearest-neighbor covariances.

    The normal is the eigenvector of the smallest eigenvalue, oriented toward
    the origin viewpoint; exactly perpendicular cases are oriented toward +z.

    Args:
        cloud: Input cloud
        k: Neighborhood size including the point itself

    Returns:
        Tuple of (cloud with normals, boolean mask of degenerate neighborhoods)

    Raises:
        ValueError: If k < 3 or the cloud has fewer than k points
    """
    if k < 3:
        raise ValueError(f"Normal estimation needs k >= 3, got {k}")
    n = len(cloud)
    if n < k:
        raise ValueError(f"Cloud has {n} points, fewer than k={k}")
    points = cloud.points
    _, neighbors = cKDTree(points).query(points, k=k)
    local = points[neighbors]
    centered = local - local.mean(axis=1, keepdims=True)
    covariance = np.einsum('nki,nkj->nij', centered, centered) / k
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    normals = eigenvectors[:, :, 0].copy()

    degenerate = eigenvalues[:, -1] <= 0.0
    normals[degenerate] = (0.0, 0.0, 1.0)
    normals /= np.linalg.norm(normals, axis=1, keepdims=True)

    to_view = -points
    facing = np.einsum('ni,ni->n', normals, to_view)
    tie = np.abs(facing) <= ORIENTATION_TIE_TOLERANCE * np.linalg.norm(to_view, axis=1)
    flip = np.where(tie, normals[:, 2] < 0, facing < 0) & ~degenerate
    normals[flip] *= -1.0

    if degenerate.any():
        logger.warning("%d of %d points have a degenerate neighborhood; normal set to +z",
                       int(degenerate.sum()), n)
    return cloud.with_normals(normals), degenerate


def estimate_normals(cloud: PointCloud, k: int = DEFAULT_NORMAL_K) -> PointCloud:
    """Cloud with estimated normals; see ``estimate_normals_with_flags``."""
    return estimate_normals_with_flags(cloud, k)[0]


def pair_features(p1: np.ndarray, n1: np.ndarray, p2: np.ndarray,
                  n2: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Darboux-frame angle triplets for arrays of point pairs.

    The source of each frame is the endpoint whose normal makes the smaller
    angle with the connecting line.

    Returns:
        (theta, alpha, phi, valid) where theta is in [-pi, pi], alpha and phi in
        [-1, 1], and ``valid`` is False for coincident points or when the first
        frame axis vanishes
    """
    delta = p2 - p1
    distance = np.linalg.norm(delta, axis=1)
    valid = distance > 0
    safe_distance = np.where(valid, distance, 1.0)
    cos_1 = np.einsum('ni,ni->n', n1, delta) / safe_distance
    cos_2 = np.einsum('ni,ni->n', n2, delta) / safe_distance

    swap = np.arccos(np.clip(np.abs(cos_1), 0.0, 1.0)) > np.arccos(np.clip(np.abs(cos_2), 0.0, 1.0))
    source_n = np.where(swap[:, None], n2, n1)
    target_n = np.where(swap[:, None], n1, n2)
    delta = np.where(swap[:, None], -delta, delta)
    phi = np.where(swap, -cos_2, cos_1)

    v = np.cross(delta, source_n)
    v_norm = np.linalg.norm(v, axis=1)
    valid &= v_norm > 0
    v = v / np.where(v_norm > 0, v_norm, 1.0)[:, None]
    w = np.cross(source_n, v)
    alpha = np.einsum('ni,ni->n', v, target_n)
    theta = np.arctan2(np.einsum('ni,ni->n', w, target_n), np.einsum('ni,ni->n', source_n, target_n))
    return theta, alpha, phi, valid


def _bin_index(values: np.ndarray, low: float, high: float) -> np.ndarray:
    index = np.floor(BINS_PER_FEATURE * (values - low) / (high - low)).astype(np.int64)
    return np.clip(index, 0, BINS_PER_FEATURE - 1)


def _neighbor_edges(points: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Directed neighbor edges within ``radius`` (coincident points dropped)."""
    pairs = cKDTree(points).query_pairs(radius, output_type='ndarray')
    if len(pairs) == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    distance = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    keep = distance > 0
    pairs, distance = pairs[keep], distance[keep]
    source = np.concatenate([pairs[:, 0], pairs[:, 1]])
    target = np.concatenate([pairs[:, 1], pairs[:, 0]])
    return source, target, np.concatenate([distance, distance])


def compute_spfh(cloud: PointCloud, radius: float) -> Tuple[np.ndarray, np.ndarray, Tuple]:
    """
    Simplified point feature histograms.

    Returns:
        (spfh, neighbor_count, (source, target, distance)) where each valid pair
        adds 100 / neighbor_count to one bin of each of the three sub-histograms
    """
    n = len(cloud)
    source, target, distance = _neighbor_edges(cloud.points, radius)
    counts = np.bincount(source, minlength=n)
    spfh = np.zeros(n * FPFH_DIM)
    if len(source):
        theta, alpha, phi, valid = pair_features(cloud.points[source], cloud.normals[source],
                                                 cloud.points[target], cloud.normals[target])
        increment = HISTOGRAM_TOTAL / counts[source[valid]]
        rows = source[valid] * FPFH_DIM
        for offset, index in ((0, _bin_index(theta[valid], -np.pi, np.pi)),
                              (BINS_PER_FEATURE, _bin_index(alpha[valid], -1.0, 1.0)),
                              (2 * BINS_PER_FEATURE, _bin_index(phi[valid], -1.0, 1.0))):
            spfh += np.bincount(rows + offset + index, weights=increment, minlength=n * FPFH_DIM)
    return spfh.reshape(n, FPFH_DIM), counts, (source, target, distance)


def normalize_histograms(raw: np.ndarray) -> np.ndarray:
    """Scale each 11-bin sub-histogram to sum to 100; all-zero blocks stay zero."""
    blocks = raw.reshape(raw.shape[0], 3, BINS_PER_FEATURE)
    sums = blocks.sum(axis=2, keepdims=True)
    scale = np.divide(HISTOGRAM_TOTAL, sums, out=np.zeros_like(sums), where=sums > 0)
    return (blocks * scale).reshape(raw.shape[0], FPFH_DIM)


def compute_fpfh(cloud: PointCloud, radius: float) -> np.ndarray:
    """
    Fast Point Feature Histograms of every point.

    FPFH(p) = SPFH(p) + (1/k) sum_q SPFH(q) / ||p - q|| over the k neighbors
    within ``radius``, then each sub-histogram is normalized to percentages.

    Args:
        cloud: Cloud with normals
        radius: Neighborhood radius in meters

    Returns:
        (N, 33) array; isolated points get all-zero rows

    Raises:
        ValueError: If normals are missing or radius is not positive
    """
    if not cloud.has_normals:
        raise ValueError("FPFH requires normals")
    if not radius > 0:
        raise ValueError(f"FPFH radius must be positive, got {radius}")
    n = len(cloud)
    if n == 0:
        return np.zeros((0, FPFH_DIM))
    spfh, counts, (source, target, distance) = compute_spfh(cloud, radius)
    if len(source) == 0:
        return np.zeros((n, FPFH_DIM))
    weights = 1.0 / (counts[source] * distance)
    neighbor_sum = csr_matrix((weights, (source, target)), shape=(n, n)) @ spfh
    return normalize_histograms(spfh + neighbor_sum)


def isolated_mask(descriptors: np.ndarray) -> np.ndarray:
    """Rows that are entirely zero (points without neighbors)."""
    return ~np.any(np.asarray(descriptors) != 0, axis=1)


def prepare_fragment(cloud: PointCloud, voxel: float, normal_k: int = DEFAULT_NORMAL_K,
                     radius: float = None) -> PointCloud:
    """
    Downsample, estimate normals and attach FPFH descriptors.

    ``normal_k`` is clamped to the downsampled size.

    Raises:
        NoModelError: If fewer than 3 points survive downsampling
    """
    radius = 2.5 * voxel if radius is None else radius
    sampled = voxel_downsample(cloud, voxel)
    if len(sampled) < 3:
        raise NoModelError(f"Only {len(sampled)} points survive voxel size {voxel}; need at least 3")
    with_normals = estimate_normals(sampled, min(normal_k, len(sampled)))
    descriptors = compute_fpfh(with_normals, radius)
    logger.debug("Prepared fragment: %d -> %d points, %d isolated",
                 len(cloud), len(sampled), int(isolated_mask(descriptors).sum()))
    return with_normals.with_descriptors(descriptors)
