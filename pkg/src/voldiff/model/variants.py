"""Model variants: which streams are active, how time enters, how materials mix."""

from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum

from ..compositing import NAIVE, PRINCIPLED

TIME_NONE = "none"
TIME_POSITIONAL = "positional-time"
TIME_FREE_CODE = "per-frame-free-code"
TIME_HARMONIC = "harmonic-low-rank"


@dataclass(frozen=True)
class VariantInfo:
    streams: tuple
    time_mode: str
    mixing: str


class ModelVariant(Enum):
    NERF = "nerf"
    NERF_BF = "nerf_bf"
    NERF_W_NN = "nerf_w_nn"
    NEURALDIFF = "neuraldiff"
    NEURALDIFF_A = "neuraldiff_a"
    NEURALDIFF_C = "neuraldiff_c"
    NEURALDIFF_CA = "neuraldiff_ca"

    @classmethod
    def parse(cls, tag) -> "ModelVariant":
        if isinstance(tag, cls):
            return tag
        # punctuation is ignored, so "NeuralDiff+C+A" and "neuraldiff-ca" both parse
        key = re.sub(r"[^a-z]", "", str(tag).lower())
        for v in cls:
            if v.value.replace("_", "") == key:
                return v
        raise ValueError(f"unknown model variant {tag!r}")

    @property
    def info(self) -> VariantInfo:
        return _INFO[self]

    @property
    def streams(self):
        return self.info.streams

    @property
    def time_mode(self) -> str:
        return self.info.time_mode

    @property
    def mixing(self) -> str:
        return self.info.mixing

    @property
    def has_actor(self) -> bool:
        return "a" in self.streams

    @property
    def has_foreground(self) -> bool:
        return "f" in self.streams

    @property
    def uses_mask_score(self) -> bool:
        """Everything except plain NeRF segments with the rendered f+a mask."""
        return self is not ModelVariant.NERF


_INFO = {
    ModelVariant.NERF: VariantInfo(("b",), TIME_NONE, NAIVE),
    ModelVariant.NERF_BF: VariantInfo(("b", "f"), TIME_POSITIONAL, NAIVE),
    ModelVariant.NERF_W_NN: VariantInfo(("b", "f"), TIME_FREE_CODE, NAIVE),
    ModelVariant.NEURALDIFF: VariantInfo(("b", "f"), TIME_HARMONIC, NAIVE),
    ModelVariant.NEURALDIFF_A: VariantInfo(("b", "f", "a"), TIME_HARMONIC, NAIVE),
    ModelVariant.NEURALDIFF_C: VariantInfo(("b", "f"), TIME_HARMONIC, PRINCIPLED),
    ModelVariant.NEURALDIFF_CA: VariantInfo(("b", "f", "a"), TIME_HARMONIC, PRINCIPLED),
}
