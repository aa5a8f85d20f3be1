# ICP package
from cognimap.icp.icp import alignment_statistics, icp_align, overlap_fractions, weighted_rigid_fit
from cognimap.icp.nn_index import NearestNeighborIndex, build_nn_index

__all__ = [
    "alignment_statistics", "icp_align", "overlap_fractions", "weighted_rigid_fit",
    "NearestNeighborIndex", "build_nn_index",
]
