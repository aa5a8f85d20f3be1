# Memory bank package
from cognimap.membank.feature_table import FeatureTable
from cognimap.membank.keyframes import select_keyframes
from cognimap.membank.memory_bank import MemoryBank
from cognimap.membank.octree import Octree, build_octree
from cognimap.membank.storage import load_bank, persist_bank
from cognimap.membank.voxel import voxel_downsample

__all__ = [
    "FeatureTable", "select_keyframes", "MemoryBank", "Octree", "build_octree",
    "load_bank", "persist_bank", "voxel_downsample",
]
