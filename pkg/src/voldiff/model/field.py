"""The coarse and fine radiance fields and their parameters.

The fine field follows the variant: a shared trunk turns the encoded world
point into a feature ``ρ`` and the background density, a small head adds
the view direction and per-frame appearance code to give the background
colour, and the dynamic streams read ``ρ`` (foreground) or the encoded
camera-frame point (actor) together with the encoded frame code.  The
coarse field is always background only and owns separate weights.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..compositing import StreamSample
from ..config import RunConfig
from ..dataio.splits import nearest_index
from ..encoding import (encoded_width, harmonic_basis, init_motion_coefficients,
                        normalized_time, positional_encoding)
from ..geometry import RaySampleBatch
from ..nn import MlpSpec, ParameterStore, init_mlp, mlp_forward
from ..nn import tensor as tt
from .variants import (TIME_FREE_CODE, TIME_HARMONIC, TIME_NONE, TIME_POSITIONAL,
                       ModelVariant)

SIGMA_BIAS = -1.0
DYN_SIGMA_BIAS = -1.0


class FrameError(KeyError):
    pass


def _hidden(layers, width):
    return (width,) * layers


class SceneModel:
    """Dual radiance field for one scene.

    ``train_frames`` are the frames that own an appearance code (and a free
    code for the per-frame-code variant); any other frame borrows the code of
    the nearest training frame.
    """

    def __init__(self, variant, cfg: RunConfig, num_frames: int, train_frames: Sequence[int],
                 near: float, far: float, seed: Optional[int] = None):
        self.variant = ModelVariant.parse(variant)
        self.cfg = cfg
        self.num_frames = int(num_frames)
        self.train_frames = np.asarray(sorted(int(i) for i in train_frames), dtype=np.int64)
        if len(self.train_frames) == 0:
            raise ValueError("need at least one training frame")
        self.near = float(near)
        self.far = float(far)
        # positions are divided by this before encoding so they land in [-1, 1]
        self.scale = float(far)
        dtype = np.float64 if cfg.precision == "float64" else np.float32
        self.store = ParameterStore(dtype)
        rng = np.random.default_rng(cfg.seed if seed is None else seed)

        # frame -> row of the per-training-frame code tables
        rows = {int(f): i for i, f in enumerate(self.train_frames)}
        self._code_row = np.array(
            [rows[nearest_index(t, self.train_frames)] for t in range(self.num_frames)], dtype=np.int64)
        self._own_row = np.array([rows.get(t, -1) for t in range(self.num_frames)], dtype=np.int64)

        c = cfg
        self.enc_xyz = encoded_width(3, c.freq_xyz)
        self.enc_dir = encoded_width(3, c.freq_dir)
        w = c.trunk_width

        self.trunk = MlpSpec((self.enc_xyz,), _hidden(c.trunk_layers, w),
                             skips=(c.trunk_skip,) if c.trunk_skip > 0 else ())
        self.sigma_head = MlpSpec((w,), (), out_width=1)
        self.use_appearance = c.appearance_width > 0
        head_in = (w, self.enc_dir) + ((c.appearance_width,) if self.use_appearance else ())
        self.color_head = MlpSpec(head_in, _hidden(c.head_layers, c.head_width), out_width=3)
        init_mlp(self.store, "trunk", self.trunk, rng)
        init_mlp(self.store, "sigma_b", self.sigma_head, rng, out_bias=[SIGMA_BIAS])
        init_mlp(self.store, "color_b", self.color_head, rng)
        if self.use_appearance:
            self.store.add("appearance",
                           rng.normal(0.0, 0.01, size=(len(self.train_frames), c.appearance_width)))

        v = self.variant
        self.code_width = 0
        if v.time_mode == TIME_HARMONIC:
            self.store.add("gamma", init_motion_coefficients(rng, c.p_basis, c.d_code))
            self._basis = harmonic_basis(normalized_time(np.arange(self.num_frames), self.num_frames),
                                         c.p_basis)
            self.code_width = encoded_width(c.d_code, c.freq_code)
        elif v.time_mode == TIME_FREE_CODE:
            self.store.add("free_codes", rng.normal(0.0, 0.01, size=(len(self.train_frames), c.d_code)))
            self.code_width = c.d_code
        elif v.time_mode == TIME_POSITIONAL:
            self.code_width = encoded_width(1, c.freq_time)

        dyn_out = [DYN_SIGMA_BIAS, 0.0, 0.0, 0.0, 0.0, 0.0]
        if v.has_foreground:
            self.fg = MlpSpec((w, self.code_width), _hidden(c.fg_layers, c.fg_width), out_width=5)
            init_mlp(self.store, "fg", self.fg, rng, out_bias=dyn_out[:5])
        if v.has_actor:
            self.actor = MlpSpec((self.enc_xyz, self.code_width), _hidden(c.actor_layers, c.actor_width),
                                 out_width=5)
            init_mlp(self.store, "actor", self.actor, rng, out_bias=dyn_out[:5])

        cw = c.coarse_width
        self.coarse_trunk = MlpSpec((self.enc_xyz,), _hidden(c.coarse_layers, cw))
        self.coarse_sigma = MlpSpec((cw,), (), out_width=1)
        self.coarse_color = MlpSpec((cw, self.enc_dir), (), out_width=3)
        init_mlp(self.store, "coarse.trunk", self.coarse_trunk, rng)
        init_mlp(self.store, "coarse.sigma", self.coarse_sigma, rng, out_bias=[SIGMA_BIAS])
        init_mlp(self.store, "coarse.color", self.coarse_color, rng)

    # -- per-ray conditioning ------------------------------------------------
    @property
    def dtype(self):
        return self.store.dtype

    def code_rows(self, frames, strict: bool = False) -> np.ndarray:
        frames = np.asarray(frames, dtype=np.int64)
        if np.any(frames < 0) or np.any(frames >= self.num_frames):
            raise FrameError(f"frame index outside [0, {self.num_frames})")
        if strict:
            own = self._own_row[frames]
            if np.any(own < 0):
                bad = int(frames[np.argmax(own < 0)])
                raise FrameError(f"frame {bad} has no learned code (not a training frame)")
            return own
        return self._code_row[frames]

    def frame_codes(self, frames, training: bool = False):
        """Encoded dynamic-stream conditioning, one row per ray (``None`` without time)."""
        mode = self.variant.time_mode
        frames = np.asarray(frames, dtype=np.int64)
        if mode == TIME_NONE:
            return None
        if mode == TIME_HARMONIC:
            if np.any(frames < 0) or np.any(frames >= self.num_frames):
                raise FrameError(f"frame index outside [0, {self.num_frames})")
            z = tt.matmul(tt.Tensor(self._basis[frames].astype(self.dtype)), self.store["gamma"])
            return positional_encoding(z, self.cfg.freq_code)
        if mode == TIME_FREE_CODE:
            return tt.take_rows(self.store["free_codes"], self.code_rows(frames, strict=training))
        t = normalized_time(frames, self.num_frames)[:, None]
        return positional_encoding(t, self.cfg.freq_time, self.dtype)

    def appearance(self, frames):
        return tt.take_rows(self.store["appearance"], self.code_rows(frames))

    def _encode_points(self, pts):
        flat = pts.reshape(-1, 3) / self.scale
        return positional_encoding(flat, self.cfg.freq_xyz, self.dtype)

    def _encode_dirs(self, dirs):
        return positional_encoding(dirs, self.cfg.freq_dir, self.dtype)

    # -- fields ----------------------------------------------------------------
    def fine(self, batch: RaySampleBatch, frames, training: bool = False,
             codes=None) -> StreamSample:
        """Per-sample outputs of every active stream of the fine field."""
        R, S = batch.depths.shape
        st = self.store
        x = self._encode_points(batch.points_world)
        rho = mlp_forward(self.trunk, st, "trunk", [x])
        sig_b = tt.softplus(mlp_forward(self.sigma_head, st, "sigma_b", [rho]))
        head_in = [rho, self._encode_dirs(batch.view_dirs)]
        if self.use_appearance:
            head_in.append(self.appearance(frames))
        col_b = tt.sigmoid(mlp_forward(self.color_head, st, "color_b", head_in))
        out = StreamSample(sigma={"b": sig_b.reshape(R, S)}, color={"b": col_b.reshape(R, S, 3)})
        if not (self.variant.has_foreground or self.variant.has_actor):
            return out
        if codes is None:
            codes = self.frame_codes(frames, training=training)
        if self.variant.has_foreground:
            self._dynamic(out, "f", mlp_forward(self.fg, st, "fg", [rho, codes]), R, S)
        if self.variant.has_actor:
            xc = self._encode_points(batch.points_camera)
            self._dynamic(out, "a", mlp_forward(self.actor, st, "actor", [xc, codes]), R, S)
        return out

    @staticmethod
    def _dynamic(out: StreamSample, p, raw, R, S):
        out.sigma[p] = tt.softplus(raw[:, 0]).reshape(R, S)
        out.color[p] = tt.sigmoid(raw[:, 1:4]).reshape(R, S, 3)
        out.beta[p] = tt.softplus(raw[:, 4]).reshape(R, S)

    def coarse(self, batch: RaySampleBatch, frames=None, training: bool = False) -> StreamSample:
        R, S = batch.depths.shape
        st = self.store
        h = mlp_forward(self.coarse_trunk, st, "coarse.trunk", [self._encode_points(batch.points_world)])
        sig = tt.softplus(mlp_forward(self.coarse_sigma, st, "coarse.sigma", [h]))
        col = tt.sigmoid(mlp_forward(self.coarse_color, st, "coarse.color",
                                     [h, self._encode_dirs(batch.view_dirs)]))
        return StreamSample(sigma={"b": sig.reshape(R, S)}, color={"b": col.reshape(R, S, 3)})

    # -- serialisation ----------------------------------------------------------
    def meta(self):
        return {"variant": self.variant.value, "num_frames": self.num_frames,
                "train_frames": self.train_frames.tolist(), "near": self.near, "far": self.far,
                "config": self.cfg.to_dict()}

    @classmethod
    def from_meta(cls, meta, state=None) -> "SceneModel":
        cfg = RunConfig.from_dict(meta["config"])
        m = cls(meta["variant"], cfg, meta["num_frames"], meta["train_frames"], meta["near"], meta["far"])
        if state is not None:
            m.store.load_state(state)
        return m
