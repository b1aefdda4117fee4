"""
Putative correspondences between two descriptor sets.
"""
from typing import Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np


class Correspondence(NamedTuple):
    """Pair (index_a, index_b) with the descriptor-space L2 distance of its endpoints."""
    index_a: int
    index_b: int
    feature_distance: float


class CorrespondenceSet:
    """Array-backed sequence of correspondences."""

    def __init__(self, index_a: Sequence[int], index_b: Sequence[int],
                 feature_distance: Optional[Sequence[float]] = None):
        self.index_a = np.asarray(index_a, dtype=np.int64).reshape(-1)
        self.index_b = np.asarray(index_b, dtype=np.int64).reshape(-1)
        if self.index_a.shape != self.index_b.shape:
            raise ValueError("index_a and index_b must have the same length")
        if feature_distance is None:
            feature_distance = np.zeros(self.index_a.shape[0])
        self.feature_distance = np.asarray(feature_distance, dtype=np.float64).reshape(-1)
        if self.feature_distance.shape != self.index_a.shape:
            raise ValueError("feature_distance must match the correspondence count")
        if np.any(self.feature_distance < 0):
            raise ValueError("Feature distances must be nonnegative")

    @classmethod
    def empty(cls) -> 'CorrespondenceSet':
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), np.zeros(0))

    @classmethod
    def from_list(cls, correspondences: Sequence[Correspondence]) -> 'CorrespondenceSet':
        if not correspondences:
            return cls.empty()
        a, b, d = zip(*correspondences)
        return cls(a, b, d)

    def subset(self, keep: Union[np.ndarray, Sequence[int]]) -> 'CorrespondenceSet':
        """Correspondences selected by boolean mask or index array, order preserved."""
        keep = np.asarray(keep)
        return CorrespondenceSet(self.index_a[keep], self.index_b[keep], self.feature_distance[keep])

    def pairs(self) -> set:
        """Set of (index_a, index_b) tuples."""
        return set(zip(self.index_a.tolist(), self.index_b.tolist()))

    def __len__(self) -> int:
        return int(self.index_a.shape[0])

    def __getitem__(self, k: int) -> Correspondence:
        return Correspondence(int(self.index_a[k]), int(self.index_b[k]), float(self.feature_distance[k]))

    def __iter__(self) -> Iterator[Correspondence]:
        for k in range(len(self)):
            yield self[k]

    def __repr__(self) -> str:
        return f"CorrespondenceSet(count={len(self)})"
