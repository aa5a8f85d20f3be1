"""
Point octree with axis-aligned box queries
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from cognimap.models.memory_models import PointCloud

MAX_DEPTH = 24


@dataclass
class OctreeNode:
    center: np.ndarray
    half_size: float
    depth: int = 0
    indices: Optional[np.ndarray] = None
    children: List["OctreeNode"] = field(default_factory=list)

    @property
    def is_leaf(self) -> bool:
        return not self.children

    def overlaps(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        return bool(np.all(self.center - self.half_size <= hi) and np.all(self.center + self.half_size >= lo))

    def inside(self, lo: np.ndarray, hi: np.ndarray) -> bool:
        return bool(np.all(self.center - self.half_size >= lo) and np.all(self.center + self.half_size <= hi))


class Octree:
    """
    Cubic root around all points; a node splits once it holds more than
    ``leaf_capacity`` points. Coincident points stop splitting at MAX_DEPTH.
    """

    def __init__(self, cloud: PointCloud, leaf_capacity: int = 64):
        self.points = cloud.points
        self.leaf_capacity = max(1, int(leaf_capacity))
        if len(cloud) == 0:
            self.root = OctreeNode(center=np.zeros(3), half_size=0.0, indices=np.zeros(0, dtype=np.int64))
            return
        lo = self.points.min(axis=0)
        hi = self.points.max(axis=0)
        half = 0.5 * float(np.max(hi - lo))
        half = half * (1.0 + 1e-9) + 1e-12
        self.root = OctreeNode(center=0.5 * (lo + hi), half_size=half,
                               indices=np.arange(len(cloud), dtype=np.int64))
        self._split(self.root)

    def __len__(self) -> int:
        return int(self.points.shape[0])

    def _split(self, node: OctreeNode) -> None:
        if node.indices.shape[0] <= self.leaf_capacity or node.depth >= MAX_DEPTH:
            return
        pts = self.points[node.indices]
        octant = ((pts[:, 0] >= node.center[0]).astype(np.int64) << 2
                  | (pts[:, 1] >= node.center[1]).astype(np.int64) << 1
                  | (pts[:, 2] >= node.center[2]).astype(np.int64))
        child_half = 0.5 * node.half_size
        for code in range(8):
            members = node.indices[octant == code]
            if members.shape[0] == 0:
                continue
            offset = np.array([(code >> 2) & 1, (code >> 1) & 1, code & 1], dtype=np.float64) * 2.0 - 1.0
            child = OctreeNode(center=node.center + offset * child_half, half_size=child_half,
                               depth=node.depth + 1, indices=members)
            node.children.append(child)
            self._split(child)
        node.indices = None

    def _collect(self, node: OctreeNode, out: List[np.ndarray]) -> None:
        if node.is_leaf:
            out.append(node.indices)
            return
        for child in node.children:
            self._collect(child, out)

    def range_query(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Sorted indices of points with ``lo <= p <= hi`` on every axis"""
        lo = np.asarray(lo, dtype=np.float64)
        hi = np.asarray(hi, dtype=np.float64)
        if len(self) == 0:
            return np.zeros(0, dtype=np.int64)
        found: List[np.ndarray] = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if not node.overlaps(lo, hi):
                continue
            if node.inside(lo, hi):
                self._collect(node, found)
            elif node.is_leaf:
                pts = self.points[node.indices]
                keep = np.all((pts >= lo) & (pts <= hi), axis=1)
                found.append(node.indices[keep])
            else:
                stack.extend(node.children)
        if not found:
            return np.zeros(0, dtype=np.int64)
        return np.sort(np.concatenate(found))

    def leaf_count(self) -> int:
        leaves: List[np.ndarray] = []
        self._collect(self.root, leaves)
        return len(leaves)

    def depth(self) -> int:
        deepest = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            deepest = max(deepest, node.depth)
            stack.extend(node.children)
        return deepest


def build_octree(cloud: PointCloud, leaf_capacity: int = 64) -> Octree:
    return Octree(cloud, leaf_capacity)
