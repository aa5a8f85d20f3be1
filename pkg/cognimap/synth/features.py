"""
Deterministic stand-in descriptors

``toy_visual_feature`` summarises the static part of an image in 1024
values; ``toy_geo_feature`` summarises a point cloud's shape in 512.
"""

import numpy as np

from cognimap.core.exceptions import EmptyInputError, InputShapeError
from cognimap.models.memory_models import GEO_DIM, FeatureVec, PointCloud

LUMINANCE_GRID = 16
GRADIENT_CELLS = 8
GRADIENT_BINS = 12
OCCUPANCY_GRID = 8


def _cell_index(size: int, cells: int) -> np.ndarray:
    return np.minimum((np.arange(size) * cells) // size, cells - 1)


def _cell_sums(values: np.ndarray, row_cell: np.ndarray, col_cell: np.ndarray, cells: int) -> np.ndarray:
    flat = row_cell[:, None] * cells + col_cell[None, :]
    return np.bincount(flat.ravel(), weights=values.ravel(), minlength=cells * cells)


def toy_visual_feature(image: np.ndarray, static: np.ndarray) -> FeatureVec:
    """
    1024-dim descriptor of the static pixels of a grey image

    256 values are the mean luminance of a 16x16 grid of cells (cells
    without static pixels take the overall static mean), 768 are
    magnitude-weighted 12-bin gradient orientation histograms over an 8x8
    grid, scaled to unit L2 norm unless the image has no gradient.
    """
    image = np.asarray(image, dtype=np.float64)
    static = np.asarray(static, dtype=bool)
    if image.ndim != 2 or image.shape != static.shape:
        raise InputShapeError(f"image {image.shape} and static mask {static.shape} must be equal 2-D grids")
    h, w = image.shape
    weights = static.astype(np.float64)
    fill = float(image[static].mean()) if static.any() else 0.0

    rows, cols = _cell_index(h, LUMINANCE_GRID), _cell_index(w, LUMINANCE_GRID)
    total = _cell_sums(image * weights, rows, cols, LUMINANCE_GRID)
    count = _cell_sums(weights, rows, cols, LUMINANCE_GRID)
    luminance = np.where(count > 0, total / np.maximum(count, 1.0), fill)

    gy, gx = np.gradient(image)
    magnitude = np.hypot(gx, gy) * weights
    orientation = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    bins = np.minimum((orientation / (2.0 * np.pi) * GRADIENT_BINS).astype(np.int64), GRADIENT_BINS - 1)
    rows, cols = _cell_index(h, GRADIENT_CELLS), _cell_index(w, GRADIENT_CELLS)
    cell = rows[:, None] * GRADIENT_CELLS + cols[None, :]
    flat = (cell * GRADIENT_BINS + bins).ravel()
    histogram = np.bincount(flat, weights=magnitude.ravel(), minlength=GRADIENT_CELLS ** 2 * GRADIENT_BINS)
    norm = np.linalg.norm(histogram)
    if norm > 0:
        histogram = histogram / norm

    values = np.concatenate([luminance, histogram]).astype(np.float32)
    return FeatureVec(values, "visual2d")


def toy_geo_feature(cloud: PointCloud) -> FeatureVec:
    """
    512-dim occupancy histogram of a cloud normalised about its centroid

    Points are scaled into the unit cube by their largest centroid offset
    and counted on an 8x8x8 grid; the counts are L1-normalised.

    Raises:
        EmptyInputError: the cloud has no points
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot describe an empty point cloud")
    offsets = cloud.points - cloud.points.mean(axis=0)
    scale = float(np.abs(offsets).max())
    unit = offsets / scale * 0.5 + 0.5 if scale > 0 else np.full_like(offsets, 0.5)
    cells = np.clip((unit * OCCUPANCY_GRID).astype(np.int64), 0, OCCUPANCY_GRID - 1)
    flat = (cells[:, 0] * OCCUPANCY_GRID + cells[:, 1]) * OCCUPANCY_GRID + cells[:, 2]
    counts = np.bincount(flat, minlength=GEO_DIM).astype(np.float64)
    return FeatureVec((counts / counts.sum()).astype(np.float32), "geometric3d")
