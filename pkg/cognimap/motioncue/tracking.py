"""
Dynamic-area tracking between segmentations
"""

import numpy as np
from scipy import ndimage

from cognimap.core.exceptions import InputShapeError
from cognimap.models.geometry_models import FlowField

CLOSING_STRUCTURE = np.ones((3, 3), dtype=bool)
_PAD = 2


def propagate_mask(m_dyn_prev: np.ndarray, flow_prev_to_cur: FlowField) -> np.ndarray:
    """
    Carry a dynamic mask one frame forward along the flow

    Each true pixel moves to its rounded flow target; targets outside the
    frame are dropped. A 3x3 closing fills the holes left by the warp.
    """
    m_dyn_prev = np.asarray(m_dyn_prev, dtype=bool)
    if m_dyn_prev.shape != flow_prev_to_cur.shape:
        raise InputShapeError(f"mask {m_dyn_prev.shape} does not match flow {flow_prev_to_cur.shape}")
    h, w = m_dyn_prev.shape
    rows, cols = np.nonzero(m_dyn_prev)
    tx = np.rint(cols + flow_prev_to_cur.u[rows, cols]).astype(np.int64)
    ty = np.rint(rows + flow_prev_to_cur.v[rows, cols]).astype(np.int64)
    keep = (tx >= 0) & (tx < w) & (ty >= 0) & (ty < h)

    warped = np.zeros((h, w), dtype=bool)
    warped[ty[keep], tx[keep]] = True
    if not warped.any():
        return warped

    # edge padding keeps closing from eroding regions that touch the border
    padded = np.pad(warped, _PAD, mode="edge")
    closed = ndimage.binary_closing(padded, structure=CLOSING_STRUCTURE, iterations=1)
    return closed[_PAD:-_PAD, _PAD:-_PAD] | warped


def new_mover_fraction(m_geo_cur: np.ndarray, m_dyn_cur: np.ndarray) -> float:
    """Share of the image flagged by geometry but not yet tracked as dynamic"""
    m_geo_cur = np.asarray(m_geo_cur, dtype=bool)
    m_dyn_cur = np.asarray(m_dyn_cur, dtype=bool)
    if m_geo_cur.shape != m_dyn_cur.shape:
        raise InputShapeError(f"mask shapes differ: {m_geo_cur.shape} vs {m_dyn_cur.shape}")
    return float(np.count_nonzero(m_geo_cur & ~m_dyn_cur)) / m_geo_cur.size


def detect_new_movers(m_geo_cur: np.ndarray, m_dyn_cur: np.ndarray, delta_new: float = 0.01) -> bool:
    return new_mover_fraction(m_geo_cur, m_dyn_cur) > delta_new


def unsupported_fraction(m_dyn_cur: np.ndarray, m_geo_cur: np.ndarray) -> float:
    """Share of the image tracked as dynamic that the geometry cue no longer flags"""
    m_dyn_cur = np.asarray(m_dyn_cur, dtype=bool)
    m_geo_cur = np.asarray(m_geo_cur, dtype=bool)
    if m_geo_cur.shape != m_dyn_cur.shape:
        raise InputShapeError(f"mask shapes differ: {m_dyn_cur.shape} vs {m_geo_cur.shape}")
    return float(np.count_nonzero(m_dyn_cur & ~m_geo_cur)) / m_dyn_cur.size


def mask_outgrew_geometry(m_dyn_cur: np.ndarray, m_geo_cur: np.ndarray, delta_stale: float = 0.02) -> bool:
    return unsupported_fraction(m_dyn_cur, m_geo_cur) > delta_stale
