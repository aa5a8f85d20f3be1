"""
Otsu threshold over a 256-bin histogram
"""

from fractions import Fraction
from typing import Optional

import numpy as np

from cognimap.core.exceptions import DegenerateDistributionError, InputValueError

OTSU_BINS = 256


def otsu_threshold(values: np.ndarray, bins: int = OTSU_BINS) -> float:
    """
    Threshold maximising between-class variance

    The histogram spans ``[0, max(values)]``. Every internal bin boundary is
    scored with exact integer arithmetic so ties resolve to the lowest
    boundary deterministically. Values strictly above the returned threshold
    form the upper class.

    Raises:
        DegenerateDistributionError: fewer than two distinct values, or all
            values share one histogram bin
    """
    values = np.asarray(values, dtype=np.float64).ravel()
    values = values[np.isfinite(values)]
    if values.size < 2:
        raise DegenerateDistributionError("need at least two values for a threshold")
    if values.min() < 0.0:
        raise InputValueError("otsu_threshold expects non-negative values")
    vmax = float(values.max())
    if vmax <= float(values.min()):
        raise DegenerateDistributionError("all values are equal")

    counts, edges = np.histogram(values, bins=bins, range=(0.0, vmax))
    counts = [int(c) for c in counts]
    total_n = sum(counts)
    # bin centre i+0.5 scaled by 2 keeps the class sums integral
    total_s = sum(c * (2 * i + 1) for i, c in enumerate(counts))

    best: Optional[Fraction] = None
    best_boundary = -1
    n0 = 0
    s0 = 0
    for boundary in range(1, bins):
        n0 += counts[boundary - 1]
        s0 += counts[boundary - 1] * (2 * boundary - 1)
        n1 = total_n - n0
        if n0 == 0 or n1 == 0:
            continue
        s1 = total_s - s0
        score = Fraction((n1 * s0 - n0 * s1) ** 2, n0 * n1)
        if best is None or score > best:
            best = score
            best_boundary = boundary

    if best is None:
        raise DegenerateDistributionError("values are not separable at histogram resolution")
    return float(edges[best_boundary])


def between_class_variance(values: np.ndarray, threshold: float, bins: int = OTSU_BINS) -> float:
    """Between-class variance of the binned values split at ``threshold``"""
    values = np.asarray(values, dtype=np.float64).ravel()
    counts, edges = np.histogram(values, bins=bins, range=(0.0, float(values.max())))
    centers = 0.5 * (edges[:-1] + edges[1:])
    lower = edges[:-1] < threshold
    w0 = counts[lower].sum() / counts.sum()
    w1 = 1.0 - w0
    if w0 == 0 or w1 == 0:
        return 0.0
    mu0 = (counts[lower] * centers[lower]).sum() / counts[lower].sum()
    mu1 = (counts[~lower] * centers[~lower]).sum() / counts[~lower].sum()
    return float(w0 * w1 * (mu0 - mu1) ** 2)
