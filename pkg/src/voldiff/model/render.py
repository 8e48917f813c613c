"""Coarse/fine ray rendering for learned and analytic fields."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from ..compositing import BETA_MIN, PRINCIPLED, RenderOutput, render_samples
from ..geometry import CameraIntrinsics, Pose, importance_sample, pixel_to_ray, ray_samples, sample_depths
from ..nn import no_grad


@dataclass
class RayBundle:
    """Rays from one or more frames: per-ray pose, camera direction and frame index."""

    rotations: np.ndarray     # (R, 3, 3)
    translations: np.ndarray  # (R, 3)
    cam_dirs: np.ndarray      # (R, 3) unit, camera frame
    frames: np.ndarray        # (R,)

    def __len__(self):
        return len(self.frames)

    def subset(self, idx) -> "RayBundle":
        return RayBundle(self.rotations[idx], self.translations[idx], self.cam_dirs[idx], self.frames[idx])

    @classmethod
    def from_frame(cls, intrinsics: CameraIntrinsics, pose: Pose, frame: int, pixels=None) -> "RayBundle":
        dirs = intrinsics.camera_directions(pixels)
        n = len(dirs)
        return cls(np.broadcast_to(pose.rotation, (n, 3, 3)), np.broadcast_to(pose.translation, (n, 3)),
                   dirs, np.full(n, int(frame), dtype=np.int64))


def march(field: Callable, rays: RayBundle, depths, far, far_cap=None, mode=PRINCIPLED,
          beta_min=BETA_MIN, payloads=("color", "uncertainty", "mask"), **field_kw) -> RenderOutput:
    """Evaluate ``field(batch, frames)`` at ``depths`` and composite along each ray."""
    batch = ray_samples(rays.rotations, rays.translations, rays.cam_dirs, depths, far, far_cap)
    samples = field(batch, rays.frames, **field_kw)
    return render_samples(samples, batch.deltas, mode, beta_min=beta_min, payloads=payloads)


def render_rays(model, rays: RayBundle, rng: Optional[np.random.Generator] = None,
                training: bool = False):
    """Coarse pass on stratified (``rng``) or midpoint depths, then the fine pass.

    The fine field sees the coarse depths merged with importance samples
    drawn from the coarse weights.  Returns ``(coarse, fine)``.
    """
    cfg = model.cfg
    near, far = model.near, model.far
    n = len(rays)
    depths = sample_depths(near, far, cfg.samples_coarse, stratified=rng is not None, rng=rng, n_rays=n)
    coarse = march(model.coarse, rays, depths, far, cfg.far_cap, PRINCIPLED, cfg.beta_min,
                   payloads=("color",), training=training)
    if cfg.samples_fine > 0:
        depths = importance_sample(coarse.weights, depths, cfg.samples_fine, near, far, rng=rng)
    fine = march(model.fine, rays, depths, far, cfg.far_cap, model.variant.mixing, cfg.beta_min,
                 training=training)
    return coarse, fine


@dataclass
class FrameRender:
    color: np.ndarray   # (H, W, 3)
    beta: np.ndarray    # (H, W)
    mask: np.ndarray    # (H, W, 3)  (b, f, a)
    coarse: np.ndarray  # (H, W, 3)


def render_bundle(model, rays: RayBundle, chunk: Optional[int] = None, workers: int = 1):
    """Deterministic no-grad render of many rays, returning flat arrays."""
    chunk = chunk or model.cfg.chunk_rays
    starts = list(range(0, len(rays), chunk))

    def one(s):
        c, f = render_rays(model, rays.subset(slice(s, s + chunk)))
        return c.color.data, f.color.data, f.beta.data, f.mask.data

    # the recording flag is global, so switch it off once around all workers
    with no_grad():
        if workers > 1 and len(starts) > 1:
            # numpy releases the GIL in the heavy kernels; chunks are independent
            with ThreadPoolExecutor(workers) as ex:
                parts = list(ex.map(one, starts))
        else:
            parts = [one(s) for s in starts]
    cols = [np.concatenate([p[i] for p in parts], axis=0) for i in range(4)]
    return cols[1], cols[2], cols[3], cols[0]


def render_frame(model, intrinsics: CameraIntrinsics, pose: Pose, frame: int, workers: int = 1) -> FrameRender:
    rays = RayBundle.from_frame(intrinsics, pose, frame)
    color, beta, mask, coarse = render_bundle(model, rays, workers=workers)
    h, w = intrinsics.height, intrinsics.width
    return FrameRender(color.reshape(h, w, 3).astype(np.float64), beta.reshape(h, w).astype(np.float64),
                       mask.reshape(h, w, 3).astype(np.float64), coarse.reshape(h, w, 3).astype(np.float64))


def render_field(field, intrinsics: CameraIntrinsics, pose: Pose, frame: int, samples: int,
                 near: float, far: float, mode=PRINCIPLED, far_cap=None,
                 chunk: int = 1024) -> FrameRender:
    """March any ``field(batch, frames)`` on midpoint depths, without a fine pass."""
    rays = RayBundle.from_frame(intrinsics, pose, frame)
    cols, betas, masks = [], [], []
    with no_grad():
        for s in range(0, len(rays), chunk):
            sub = rays.subset(slice(s, s + chunk))
            depths = sample_depths(near, far, samples, n_rays=len(sub))
            out = march(field, sub, depths, far, far_cap, mode)
            cols.append(out.color.data)
            betas.append(out.beta.data)
            masks.append(out.mask.data)
    h, w = intrinsics.height, intrinsics.width
    color = np.concatenate(cols).reshape(h, w, 3)
    return FrameRender(color, np.concatenate(betas).reshape(h, w), np.concatenate(masks).reshape(h, w, 3),
                       color)


def render_pixel(model, intrinsics: CameraIntrinsics, pose: Pose, pixel, frame: int,
                 rng: Optional[np.random.Generator] = None):
    """Coarse and fine :class:`RenderOutput` for a single pixel."""
    pixel_to_ray(intrinsics, pose, pixel)  # bounds check
    rays = RayBundle.from_frame(intrinsics, pose, frame, pixels=[pixel])
    with no_grad():
        return render_rays(model, rays, rng=rng)
