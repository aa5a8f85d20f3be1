"""
Exact nearest-neighbour index over 3-D points
"""

from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree

from cognimap.core.exceptions import EmptyInputError
from cognimap.models.memory_models import PointCloud


class NearestNeighborIndex:
    """
    k-d tree over the distinct points of a cloud

    Duplicated points collapse onto one tree node that answers with the
    lowest original index.
    """

    def __init__(self, cloud: PointCloud):
        if len(cloud) == 0:
            raise EmptyInputError("cannot index an empty point cloud")
        unique, first_index = np.unique(cloud.points, axis=0, return_index=True)
        self._points = cloud.points
        self._original = first_index.astype(np.int64)
        self._tree = cKDTree(unique)

    def __len__(self) -> int:
        return int(self._points.shape[0])

    @property
    def points(self) -> np.ndarray:
        return self._points

    def query(self, queries: np.ndarray, max_distance: float = np.inf) -> Tuple[np.ndarray, np.ndarray]:
        """
        Nearest stored point for every query

        Returns:
            (distances, indices); queries with no neighbour within
            ``max_distance`` get distance inf and index -1
        """
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        distances, idx = self._tree.query(queries, k=1, distance_upper_bound=max_distance)
        found = np.isfinite(distances)
        indices = np.full(queries.shape[0], -1, dtype=np.int64)
        indices[found] = self._original[idx[found]]
        return distances, indices


def build_nn_index(cloud: PointCloud) -> NearestNeighborIndex:
    return NearestNeighborIndex(cloud)
