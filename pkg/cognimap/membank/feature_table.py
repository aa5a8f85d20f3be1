"""
Global feature table with random-hyperplane hashing

Each entry's sign pattern against ``n_planes`` seeded hyperplanes is its
bucket code. Queries look in their own bucket and every bucket one bit away,
and fall back to an exact scan when the table is small or those buckets
hold too few candidates.
"""

import logging
from collections import defaultdict
from typing import Dict, List, Optional

import numpy as np
from scipy.spatial.distance import pdist

from cognimap.core.exceptions import InputShapeError
from cognimap.models.memory_models import VISUAL_DIM, FeatureVec, TableMatch

logger = logging.getLogger(__name__)

MAX_CALIBRATION_ENTRIES = 2000


class FeatureTable:
    """Flat store of (feature, map_id, frame_id) entries"""

    def __init__(self, dim: int = VISUAL_DIM, n_planes: int = 16, seed: int = 0,
                 exact_fallback_below: int = 10000):
        self.dim = dim
        self.n_planes = n_planes
        self.seed = seed
        self.exact_fallback_below = exact_fallback_below
        self._planes = np.random.default_rng(seed).standard_normal((n_planes, dim))
        self._weights = np.left_shift(np.int64(1), np.arange(n_planes, dtype=np.int64))
        self._chunks: List[np.ndarray] = []
        self._values: Optional[np.ndarray] = None
        self._map_ids: List[int] = []
        self._frame_ids: List[int] = []
        self._buckets: Dict[int, List[int]] = defaultdict(list)

    def __len__(self) -> int:
        return len(self._map_ids)

    @property
    def values(self) -> np.ndarray:
        """N x dim float32 matrix of stored features"""
        if self._values is None or self._values.shape[0] != len(self):
            stacked = ([self._values] if self._values is not None else []) + self._chunks
            self._values = (np.vstack(stacked) if stacked
                            else np.zeros((0, self.dim), dtype=np.float32))
            self._chunks = []
        return self._values

    @property
    def map_ids(self) -> np.ndarray:
        return np.asarray(self._map_ids, dtype=np.int64)

    @property
    def frame_ids(self) -> np.ndarray:
        return np.asarray(self._frame_ids, dtype=np.int64)

    def bucket_code(self, values: np.ndarray) -> int:
        bits = (self._planes @ np.asarray(values, dtype=np.float64)) > 0.0
        return int(np.sum(self._weights[bits]))

    def add(self, feature: FeatureVec, map_id: int, frame_id: int) -> int:
        """Insert one entry and return its index"""
        if feature.dim != self.dim:
            raise InputShapeError(f"table holds {self.dim}-dim features, got {feature.dim}")
        index = len(self)
        self._chunks.append(feature.values.reshape(1, -1))
        self._map_ids.append(int(map_id))
        self._frame_ids.append(int(frame_id))
        self._buckets[self.bucket_code(feature.values)].append(index)
        return index

    def bucket_count(self) -> int:
        return len(self._buckets)

    def _neighbour_buckets(self, code: int) -> np.ndarray:
        hits = list(self._buckets.get(code, ()))
        for bit in range(self.n_planes):
            hits.extend(self._buckets.get(code ^ (1 << bit), ()))
        return np.asarray(sorted(hits), dtype=np.int64)

    def _rank(self, q: np.ndarray, candidates: np.ndarray, n: int) -> List[TableMatch]:
        diffs = self.values[candidates].astype(np.float64) - q
        distances = np.sqrt(np.einsum("ij,ij->i", diffs, diffs))
        order = np.lexsort((candidates, distances))[:n]
        return [TableMatch(index=int(candidates[i]), map_id=self._map_ids[candidates[i]],
                           frame_id=self._frame_ids[candidates[i]], distance=float(distances[i]))
                for i in order]

    def exact_query(self, feature: FeatureVec, n: int = 1) -> List[TableMatch]:
        if len(self) == 0:
            return []
        q = feature.values.astype(np.float64)
        return self._rank(q, np.arange(len(self), dtype=np.int64), n)

    def query(self, feature: FeatureVec, n: int = 1) -> List[TableMatch]:
        """
        ``n`` nearest entries by L2, nearest first (ties by insertion order)

        An empty table yields an empty list.
        """
        if len(self) == 0:
            return []
        if feature.dim != self.dim:
            raise InputShapeError(f"table holds {self.dim}-dim features, got {feature.dim}")
        if len(self) < self.exact_fallback_below:
            return self.exact_query(feature, n)
        candidates = self._neighbour_buckets(self.bucket_code(feature.values))
        if candidates.shape[0] < n:
            return self.exact_query(feature, n)
        return self._rank(feature.values.astype(np.float64), candidates, n)

    def inter_map_median_distance(self) -> float:
        """
        Median distance between entries of different maps

        Tables larger than MAX_CALIBRATION_ENTRIES are subsampled with the
        table seed. Returns inf when fewer than two maps are stored.
        """
        map_ids = self.map_ids
        if np.unique(map_ids).shape[0] < 2:
            return float("inf")
        idx = np.arange(len(self))
        if idx.shape[0] > MAX_CALIBRATION_ENTRIES:
            idx = np.sort(np.random.default_rng(self.seed).choice(idx, MAX_CALIBRATION_ENTRIES, replace=False))
        distances = pdist(self.values[idx].astype(np.float64))
        rows, cols = np.triu_indices(idx.shape[0], k=1)
        different = map_ids[idx][rows] != map_ids[idx][cols]
        if not different.any():
            return float("inf")
        return float(np.median(distances[different]))
