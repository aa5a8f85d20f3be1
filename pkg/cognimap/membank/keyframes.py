"""
Keyframe selection by feature-space spacing
"""

from typing import List, Optional, Sequence

import numpy as np

from cognimap.core.exceptions import EmptyInputError
from cognimap.models.memory_models import FeatureVec


def auto_keyframe_distance(features: Sequence[FeatureVec]) -> float:
    """Median of the non-zero distances between consecutive features (inf when there are none)"""
    steps = [a.distance(b) for a, b in zip(features[:-1], features[1:])]
    steps = [s for s in steps if s > 0.0]
    if not steps:
        return float("inf")
    return float(np.median(steps))


def select_keyframes(features: Sequence[FeatureVec], d_target: Optional[float] = None) -> List[int]:
    """
    Greedy spacing: keep frame 0, then every frame at least ``d_target`` away
    from the last kept one

    ``d_target=None`` uses the median consecutive distance.
    """
    if len(features) == 0:
        raise EmptyInputError("keyframe selection needs at least one feature")
    if d_target is None:
        d_target = auto_keyframe_distance(features)
    kept = [0]
    for i in range(1, len(features)):
        if features[i].distance(features[kept[-1]]) >= d_target:
            kept.append(i)
    return kept
