"""Scene datasets, split rules, synthetic scenes and output files."""

from .splits import TEST, TRAIN, VAL, assign_splits, nearest_index, split_indices
from .scene import FORMAT as SCENE_FORMAT, SceneDataset, SceneError, load_scene, save_scene
from .synth import (AnalyticField, AnalyticScene, MovingObject, SpecError, SyntheticSceneSpec, march_frame,
                    synthesize_scene, toy_kitchen)
from .outputs import read_score_png, save_outputs, write_score_png

__all__ = [
    "AnalyticField", "AnalyticScene", "MovingObject", "SCENE_FORMAT", "SceneDataset", "SceneError", "SpecError",
    "SyntheticSceneSpec", "TEST", "TRAIN", "VAL", "assign_splits", "load_scene", "march_frame",
    "nearest_index", "read_score_png", "save_outputs", "save_scene", "split_indices",
    "synthesize_scene", "toy_kitchen", "write_score_png",
]
