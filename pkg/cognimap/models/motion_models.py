"""
Motion-cue result models
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from cognimap.core.exceptions import InputShapeError


@dataclass(frozen=True)
class GmmResult:
    """
    Gaussian mixture fitted to per-pixel flow vectors

    Labels are cluster indices ``0..effective_k-1`` at valid pixels and -1
    elsewhere.
    """
    labels: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    weights: np.ndarray
    log_likelihood: float
    log_likelihood_history: List[float] = field(default_factory=list)
    iterations: int = 0
    dropped_clusters: int = 0

    @property
    def effective_k(self) -> int:
        return int(self.weights.shape[0])

    def bic(self, n_samples: int) -> float:
        """Bayesian information criterion of the fit (lower is better)"""
        n_params = self.effective_k * 6 - 1  # 2 mean + 3 covariance + 1 weight per cluster
        return -2.0 * self.log_likelihood + n_params * np.log(max(n_samples, 1))


@dataclass(frozen=True)
class KeypointMatches:
    """Pixel correspondences between frame t and frame t2 with match scores"""
    pixels_t: np.ndarray
    pixels_t2: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        pixels_t = np.asarray(self.pixels_t, dtype=np.float64).reshape(-1, 2)
        pixels_t2 = np.asarray(self.pixels_t2, dtype=np.float64).reshape(-1, 2)
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        if not (len(pixels_t) == len(pixels_t2) == len(scores)):
            raise InputShapeError("match arrays must have equal lengths")
        object.__setattr__(self, "pixels_t", pixels_t)
        object.__setattr__(self, "pixels_t2", pixels_t2)
        object.__setattr__(self, "scores", scores)

    @classmethod
    def empty(cls) -> "KeypointMatches":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0))

    def __len__(self) -> int:
        return int(self.scores.shape[0])


@dataclass(frozen=True)
class GeometryCue:
    """Residual flow after removing ego-motion, with its Otsu mask"""
    residual: np.ndarray
    m_geo: np.ndarray
    tau: float
    valid: np.ndarray
    degenerate: bool = False


@dataclass(frozen=True)
class RobustCue:
    """Keypoint-verified dynamic mask"""
    m_dyn: np.ndarray
    dynamic_flags: np.ndarray
    static_reference_count: int
    fallback: bool = False


@dataclass
class DynamicMask:
    """Per-frame dynamic-region masks and the Otsu threshold that produced m_geo"""
    m_flow: np.ndarray
    m_geo: np.ndarray
    m_dyn: np.ndarray
    tau_geo: float
    source: str = "segmented"
    gmm: Optional[GmmResult] = None

    @classmethod
    def static(cls, height: int, width: int, source: str = "static") -> "DynamicMask":
        empty = np.zeros((height, width), dtype=bool)
        return cls(m_flow=empty.copy(), m_geo=empty.copy(), m_dyn=empty.copy(),
                   tau_geo=float("inf"), source=source)
