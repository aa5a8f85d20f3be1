# CogniMap package
"""
Dynamic-scene mapping core: motion segmentation, persistent scene memory
and factor-graph trajectory refinement over per-frame priors.
"""

__version__ = "0.3.0"
