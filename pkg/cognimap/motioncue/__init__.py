# Motion cue package
from cognimap.motioncue.cues import flow_motion_cue, geometry_motion_cue, geometry_supported_flow, robust_motion_cue
from cognimap.motioncue.gmm import fit_gmm, select_gmm
from cognimap.motioncue.otsu import otsu_threshold
from cognimap.motioncue.segmenter import iter_masks, segment_pair, segment_sequence
from cognimap.motioncue.tracking import detect_new_movers, mask_outgrew_geometry, propagate_mask

__all__ = [
    "flow_motion_cue", "geometry_motion_cue", "geometry_supported_flow", "robust_motion_cue",
    "fit_gmm", "select_gmm", "otsu_threshold",
    "iter_masks", "segment_pair", "segment_sequence",
    "detect_new_movers", "mask_outgrew_geometry", "propagate_mask",
]
