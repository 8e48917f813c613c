"""Training loop, checkpoints and per-frame segmentation."""

from __future__ import annotations

import json
import math
import os
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np

from ..config import RunConfig
from ..geometry import Pose
from ..nn import Adam, NonFiniteGradient, backward, load_checkpoint, save_checkpoint
from .field import SceneModel
from .losses import total_loss
from .render import RayBundle, render_bundle, render_frame, render_rays
from .variants import ModelVariant

CHECKPOINT_NAME = "checkpoint.ckpt"
METRICS_NAME = "metrics.jsonl"


class NonFiniteLoss(FloatingPointError):
    def __init__(self, step: int, epoch: int, batch: int):
        super().__init__(f"non-finite loss at step {step} (epoch {epoch}, batch {batch})")
        self.step, self.epoch, self.batch = step, epoch, batch


def psnr_from_mse(mse: float) -> float:
    return math.inf if mse <= 0 else -10.0 * math.log10(mse)


class PixelTable:
    """Flat list of ``(frame, pixel)`` training rays with their colours."""

    def __init__(self, scene, frames):
        intr = scene.intrinsics
        npix = intr.num_pixels
        frames = np.asarray(frames, dtype=np.int64)
        self.frames = np.repeat(frames, npix)
        self.pixels = np.tile(np.arange(npix), len(frames))
        self.colors = scene.images[frames].reshape(-1, 3)
        self._dirs = intr.camera_directions()
        self._rot = np.stack([p.rotation for p in scene.poses])
        self._trans = np.stack([p.translation for p in scene.poses])

    def __len__(self):
        return len(self.frames)

    def rays(self, idx) -> RayBundle:
        f = self.frames[idx]
        return RayBundle(self._rot[f], self._trans[f], self._dirs[self.pixels[idx]], f)


@dataclass
class TrainResult:
    model: SceneModel
    log: List[dict]
    step: int
    total_steps: int
    checkpoint: Optional[str] = None


def _state_arrays(model: SceneModel, opt: Optional[Adam]):
    arrays = OrderedDict(("param/" + k, v) for k, v in model.store.state().items())
    if opt is not None:
        for k in model.store.names():
            arrays["adam_m/" + k] = opt.m[k]
            arrays["adam_v/" + k] = opt.v[k]
    return arrays


def save_model(path, model: SceneModel, opt: Optional[Adam] = None, step: int = 0, log=None,
               total_steps: int = 0):
    meta = {"kind": "voldiff-model", "model": model.meta(), "step": int(step),
            "total_steps": int(total_steps), "log": list(log or [])}
    save_checkpoint(path, _state_arrays(model, opt), meta=meta, precision=model.cfg.precision)
    return os.fspath(path)


def load_model(path):
    """Return ``(model, manifest, adam_state)``; ``adam_state`` is ``(m, v)`` or ``None``."""
    arrays, manifest = load_checkpoint(path)
    if manifest.get("kind") != "voldiff-model":
        raise ValueError(f"{path}: not a model checkpoint")
    state = {k[6:]: v for k, v in arrays.items() if k.startswith("param/")}
    model = SceneModel.from_meta(manifest["model"], state)
    m = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_m/")}
    v = {k[7:]: v for k, v in arrays.items() if k.startswith("adam_v/")}
    adam = (m, v) if m else None
    return model, manifest, adam


def validation_psnr(model: SceneModel, table: PixelTable, idx) -> float:
    color, _, _, _ = render_bundle(model, table.rays(idx), workers=model.cfg.workers)
    mse = float(np.mean((color.astype(np.float64) - table.colors[idx]) ** 2))
    return psnr_from_mse(mse)


def _val_subset(table: PixelTable, cfg: RunConfig):
    n = min(cfg.val_rays, len(table))
    rng = np.random.default_rng([cfg.seed, 7])
    return np.sort(rng.choice(len(table), size=n, replace=False))


def train(scene, variant, cfg: RunConfig, out_dir=None, resume=None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Fit the dual field to the training frames of ``scene``.

    One epoch is one pass over every training pixel in a random order drawn
    from ``(seed, epoch)``; stratified and importance samples of step ``s``
    come from ``(seed, s)``, so a resumed run replays an uninterrupted one.
    ``cfg.max_steps`` stops early without changing the learning-rate schedule.
    """
    variant = ModelVariant.parse(variant)
    cfg = cfg.updated(variant=variant.value)
    near = cfg.near if cfg.near is not None else scene.near
    far = cfg.far if cfg.far is not None else scene.far
    train_frames = scene.train_indices
    table = PixelTable(scene, train_frames)
    val_frames = scene.val_indices
    val_table = PixelTable(scene, val_frames) if len(val_frames) else None
    val_idx = _val_subset(val_table, cfg) if val_table is not None else None

    steps_per_epoch = math.ceil(len(table) / cfg.batch_rays)
    total_steps = cfg.epochs * steps_per_epoch
    stop = total_steps if cfg.max_steps == 0 else min(total_steps, cfg.max_steps)

    log: List[dict] = []
    if resume is not None:
        model, manifest, adam = load_model(resume)
        if model.variant is not variant:
            raise ValueError(f"checkpoint holds variant {model.variant.value}, asked for {variant.value}")
        model.cfg = cfg
        step = int(manifest["step"])
        log = list(manifest.get("log", []))
    else:
        model = SceneModel(variant, cfg, scene.num_frames, train_frames, near, far)
        step = 0
        adam = None

    opt = Adam(model.store, max(total_steps, 1), cfg.lr0)
    if adam is not None:
        opt.load_state(step, *adam)

    def val():
        return validation_psnr(model, val_table, val_idx) if val_table is not None else None

    if not log:
        log.append({"epoch": 0, "step": 0, "loss": None, "val_psnr": val()})
        if progress:
            progress(log[-1])

    epoch_loss, epoch_count = 0.0, 0
    while step < stop:
        epoch, within = divmod(step, steps_per_epoch)
        perm = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(table))
        idx = perm[within * cfg.batch_rays:(within + 1) * cfg.batch_rays]
        rng = np.random.default_rng([cfg.seed, 2, step])

        coarse, fine = render_rays(model, table.rays(idx), rng=rng, training=True)
        loss, parts = total_loss(table.colors[idx], coarse, fine, cfg.lambda_sparse)
        if not np.isfinite(loss.data):
            raise NonFiniteLoss(step, epoch + 1, within)
        model.store.zero_grad()
        backward(loss)
        opt.update()
        step += 1
        epoch_loss += float(loss.data)
        epoch_count += 1

        if step % steps_per_epoch == 0 or step == stop:
            entry = {"epoch": round(step / steps_per_epoch, 6), "step": step,
                     "loss": epoch_loss / epoch_count, "val_psnr": val()}
            for k, v in parts.items():
                entry["last_" + k] = v
            log.append(entry)
            if progress:
                progress(entry)
            epoch_loss, epoch_count = 0.0, 0

    ckpt = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        ckpt = save_model(os.path.join(out_dir, CHECKPOINT_NAME), model, opt, step, log, total_steps)
        write_metrics(os.path.join(out_dir, METRICS_NAME), log)
    return TrainResult(model, log, step, total_steps, ckpt)


def write_metrics(path, log):
    with open(path, "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")


@dataclass
class Segmentation:
    score: np.ndarray   # (H, W) foreground score
    mask: np.ndarray    # (H, W, 3) rendered (b, f, a) layers
    color: np.ndarray   # (H, W, 3)
    beta: np.ndarray    # (H, W)


def segment_frame(model: SceneModel, scene, frame: int, pose: Optional[Pose] = None,
                  image: Optional[np.ndarray] = None, workers: int = 1) -> Segmentation:
    """Render frame ``frame`` (optionally from another ``pose``) and score every pixel.

    Plain NeRF scores pixels by squared reconstruction error against
    ``image`` (default: the scene's frame); the other variants use the
    rendered foreground plus actor mask.
    """
    frame = int(frame)
    if pose is None:
        if not 0 <= frame < scene.num_frames:
            raise KeyError(f"frame {frame} has no pose")
        pose = scene.poses[frame]
    out = render_frame(model, scene.intrinsics, pose, frame, workers=workers)
    if model.variant.uses_mask_score:
        score = out.mask[..., 1] + out.mask[..., 2]
    else:
        ref = scene.images[frame] if image is None else np.asarray(image, dtype=np.float64)
        score = np.mean((out.color - ref) ** 2, axis=-1)
    return Segmentation(score, out.mask, out.color, out.beta)
