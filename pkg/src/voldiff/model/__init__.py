"""Three-stream scene model: variants, fields, rendering, losses and training."""

from .variants import ModelVariant
from .field import FrameError, SceneModel
from .losses import loss_coarse, loss_prob, loss_sparse, total_loss
from .render import (FrameRender, RayBundle, march, render_bundle, render_field, render_frame,
                     render_pixel, render_rays)
from .train import (NonFiniteLoss, Segmentation, TrainResult, load_model, save_model, segment_frame,
                    train)

__all__ = [
    "FrameError", "FrameRender", "ModelVariant", "NonFiniteLoss", "RayBundle", "SceneModel",
    "Segmentation", "TrainResult", "load_model", "loss_coarse", "loss_prob", "loss_sparse",
    "march", "render_bundle", "render_field", "render_frame", "render_pixel", "render_rays", "save_model",
    "segment_frame", "total_loss", "train",
]
