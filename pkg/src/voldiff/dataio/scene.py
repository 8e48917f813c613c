"""Scene directories: metadata, frame images and optional masks.

Layout::

    scene.json          VOLDIFF-SCENE-1 metadata (UTF-8 JSON)
    frames/00000.png    8-bit RGB
    masks/00000.png     8-bit binary foreground mask (0 / 255), optional
    layers/00000.png    8-bit layer mask, (R, G, B) = (background, objects, actor), optional

``scene.json`` holds the intrinsics, near/far bounds and per frame the
4x4 world-from-camera matrix (row-major nested lists) and split tag.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from ..geometry import CameraIntrinsics, GeometryError, Pose
from .splits import TEST, TRAIN, VAL, split_indices

FORMAT = "VOLDIFF-SCENE-1"


class SceneError(ValueError):
    pass


@dataclass
class SceneDataset:
    intrinsics: CameraIntrinsics
    poses: List[Pose]
    images: np.ndarray                  # (T, H, W, 3) float64 in [0, 1]
    splits: List[str]
    near: float
    far: float
    masks: Dict[int, np.ndarray] = field(default_factory=dict)        # frame -> (H, W) bool
    layer_masks: Dict[int, np.ndarray] = field(default_factory=dict)  # frame -> (H, W, 3) float
    name: str = "scene"

    def __post_init__(self):
        T = len(self.poses)
        if self.images.shape[0] != T or len(self.splits) != T:
            raise SceneError("poses, images and split tags must have one entry per frame")
        h, w = self.intrinsics.height, self.intrinsics.width
        if self.images.shape[1:] != (h, w, 3):
            raise SceneError(f"images are {self.images.shape[1:3]}, intrinsics say {(h, w)}")
        if not 0 < self.near < self.far:
            raise SceneError(f"need 0 < near < far, got {self.near}, {self.far}")
        for i, m in self.masks.items():
            if m.shape != (h, w):
                raise SceneError(f"mask of frame {i} has shape {m.shape}")

    @property
    def num_frames(self) -> int:
        return len(self.poses)

    def indices(self, which) -> np.ndarray:
        return split_indices(self.splits, which)

    @property
    def train_indices(self):
        return self.indices(TRAIN)

    @property
    def val_indices(self):
        return self.indices(VAL)

    @property
    def test_indices(self):
        return self.indices(TEST)

    def has_masks(self, frames) -> bool:
        return all(int(i) in self.masks for i in frames)


def _to_u8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(img) * 255.0), 0, 255).astype(np.uint8)


def save_scene(scene: SceneDataset, directory) -> str:
    directory = os.fspath(directory)
    os.makedirs(os.path.join(directory, "frames"), exist_ok=True)
    frames = []
    for i, pose in enumerate(scene.poses):
        name = f"{i:05d}.png"
        Image.fromarray(_to_u8(scene.images[i]), "RGB").save(os.path.join(directory, "frames", name))
        entry = {"index": i, "split": scene.splits[i], "image": f"frames/{name}",
                 "world_from_camera": pose.matrix().tolist()}
        if i in scene.masks:
            os.makedirs(os.path.join(directory, "masks"), exist_ok=True)
            m = (np.asarray(scene.masks[i], dtype=bool).astype(np.uint8) * 255)
            Image.fromarray(m, "L").save(os.path.join(directory, "masks", name))
            entry["mask"] = f"masks/{name}"
        if i in scene.layer_masks:
            os.makedirs(os.path.join(directory, "layers"), exist_ok=True)
            Image.fromarray(_to_u8(scene.layer_masks[i]), "RGB").save(
                os.path.join(directory, "layers", name))
            entry["layers"] = f"layers/{name}"
        frames.append(entry)
    meta = {"format": FORMAT, "name": scene.name, "intrinsics": scene.intrinsics.to_dict(),
            "near": scene.near, "far": scene.far, "num_frames": scene.num_frames,
            "frames": frames}
    with open(os.path.join(directory, "scene.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    return directory


def _read_png(path, mode):
    with Image.open(path) as im:
        if im.mode != mode:
            im = im.convert(mode)
        return np.asarray(im)


def load_scene(directory) -> SceneDataset:
    directory = os.fspath(directory)
    meta_path = os.path.join(directory, "scene.json")
    if not os.path.isfile(meta_path):
        raise SceneError(f"{directory}: no scene.json")
    try:
        with open(meta_path, encoding="utf-8") as fh:
            meta = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SceneError(f"{meta_path}: malformed metadata ({exc})") from None
    if meta.get("format") != FORMAT:
        raise SceneError(f"{meta_path}: expected format {FORMAT!r}, got {meta.get('format')!r}")
    try:
        intr = CameraIntrinsics.from_dict(meta["intrinsics"])
        near, far = float(meta["near"]), float(meta["far"])
        entries = sorted(meta["frames"], key=lambda e: e["index"])
    except (KeyError, TypeError, GeometryError) as exc:
        raise SceneError(f"{meta_path}: bad metadata ({exc})") from None
    if [e["index"] for e in entries] != list(range(len(entries))):
        raise SceneError(f"{meta_path}: frame indices must be 0..T-1 without gaps")

    poses, images, splits = [], [], []
    masks, layers = {}, {}
    for e in entries:
        i = e["index"]
        if "world_from_camera" not in e:
            raise SceneError(f"frame {i}: missing pose")
        try:
            poses.append(Pose.from_matrix(e["world_from_camera"]))
        except GeometryError as exc:
            raise SceneError(f"frame {i}: {exc}") from None
        split = e.get("split")
        if split not in (TRAIN, VAL, TEST):
            raise SceneError(f"frame {i}: unknown split {split!r}")
        splits.append(split)
        img = _read_png(os.path.join(directory, e["image"]), "RGB")
        if img.shape[:2] != (intr.height, intr.width):
            raise SceneError(f"frame {i}: image is {img.shape[1]}x{img.shape[0]}, "
                             f"expected {intr.width}x{intr.height}")
        images.append(img.astype(np.float64) / 255.0)
        if "mask" in e:
            m = _read_png(os.path.join(directory, e["mask"]), "L")
            if m.shape != (intr.height, intr.width):
                raise SceneError(f"frame {i}: mask size mismatch")
            masks[i] = m >= 128
        if "layers" in e:
            layers[i] = _read_png(os.path.join(directory, e["layers"]), "RGB").astype(np.float64) / 255.0
    return SceneDataset(intr, poses, np.stack(images), splits, near, far, masks, layers,
                        name=meta.get("name", os.path.basename(os.path.abspath(directory))))
