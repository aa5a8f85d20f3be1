# Synthetic scene package
from cognimap.synth.features import toy_geo_feature, toy_visual_feature
from cognimap.synth.noise import perturb_poses
from cognimap.synth.renderer import GroundTruth, SceneRenderer, generate
from cognimap.synth.scene import Box, Mover, SceneConfig, random_scene_config
from cognimap.synth.writer import write_sequence

__all__ = [
    "toy_geo_feature", "toy_visual_feature", "perturb_poses",
    "GroundTruth", "SceneRenderer", "generate",
    "Box", "Mover", "SceneConfig", "random_scene_config",
    "write_sequence",
]
