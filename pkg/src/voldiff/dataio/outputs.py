"""Writing rendered frames, layer masks and score maps to disk.

Files are named ``frame_%05d`` inside ``renders/``, ``masks/`` and
``scores/``.  Layer masks store (background, foreground, actor) in the
(R, G, B) channels.  Score maps are 16-bit grayscale; the value stored is
``round(score / scale * 65535)`` with ``scale`` recorded per frame in
``manifest.json`` (1.0 for scores already in [0, 1]).
"""

from __future__ import annotations

import json
import os
from typing import Dict, Optional

import numpy as np
from PIL import Image

MANIFEST = "manifest.json"
FORMAT = "VOLDIFF-OUTPUTS-1"
CHANNEL_ORDER = ("b", "f", "a")


def frame_name(index: int) -> str:
    return f"frame_{int(index):05d}.png"


def _u8(img):
    return np.clip(np.round(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def write_score_png(path, score, scale: Optional[float] = None) -> float:
    s = np.asarray(score, dtype=np.float64)
    if np.any(s < 0) or not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite and nonnegative")
    if scale is None:
        mx = float(s.max(initial=0.0))
        scale = 1.0 if mx <= 1.0 else mx
    q = np.clip(np.round(s / scale * 65535.0), 0, 65535).astype(np.uint16)
    Image.fromarray(q).save(path)
    return float(scale)


def read_score_png(path, scale: float = 1.0) -> np.ndarray:
    with Image.open(path) as im:
        q = np.asarray(im).astype(np.float64)
    return q / 65535.0 * scale


def save_outputs(directory, renders: Optional[Dict[int, np.ndarray]] = None,
                 masks: Optional[Dict[int, np.ndarray]] = None,
                 scores: Optional[Dict[int, np.ndarray]] = None, meta: Optional[dict] = None) -> str:
    """Write whatever is given (dicts keyed by frame index) plus a manifest."""
    directory = os.fspath(directory)
    os.makedirs(directory, exist_ok=True)
    renders, masks, scores = renders or {}, masks or {}, scores or {}
    shapes = {np.asarray(a).shape[:2] for d in (renders, masks, scores) for a in d.values()}
    if len(shapes) > 1:
        raise ValueError(f"inconsistent resolutions: {sorted(shapes)}")
    entries = {}
    for sub, items in (("renders", renders), ("masks", masks)):
        if items:
            os.makedirs(os.path.join(directory, sub), exist_ok=True)
        for i, img in sorted(items.items()):
            Image.fromarray(_u8(img), "RGB").save(os.path.join(directory, sub, frame_name(i)))
            entries.setdefault(str(int(i)), {})[sub] = f"{sub}/{frame_name(i)}"
    if scores:
        os.makedirs(os.path.join(directory, "scores"), exist_ok=True)
    for i, sc in sorted(scores.items()):
        scale = write_score_png(os.path.join(directory, "scores", frame_name(i)), sc)
        e = entries.setdefault(str(int(i)), {})
        e["scores"] = f"scores/{frame_name(i)}"
        e["score_scale"] = scale
    manifest = {"format": FORMAT, "mask_channels": list(CHANNEL_ORDER), "frames": entries}
    if meta:
        manifest["meta"] = meta
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return directory
