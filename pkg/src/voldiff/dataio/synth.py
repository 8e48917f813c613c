"""Synthetic egocentric scenes with analytic density/colour fields.

A scene is a textured room with a table (static background), a few objects
that sit still most of the time and jump to a new pose in bursts, and an
actor blob rigidly attached to the camera.  Frames are rendered by dense
ray marching of the analytic fields, and ground-truth layer masks come from
compositing the pseudo-colours of the three layers with density-share
mixing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, asdict
from typing import List, Optional, Tuple

import numpy as np

from .. import kernels
from ..compositing import StreamSample
from ..geometry import CameraIntrinsics, Pose, segment_lengths
from .scene import SceneDataset
from .splits import assign_splits

MASK_THRESHOLD = 0.5


class SpecError(ValueError):
    def __init__(self, fieldname, message):
        super().__init__(f"{fieldname}: {message}")
        self.field = fieldname


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def soft_box_density(p, center, half, peak, softness):
    """Density ``peak * sigmoid(-sdf / softness)`` of an axis-aligned box."""
    q = np.abs(p - np.asarray(center)) - np.asarray(half)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return peak * _sigmoid(-(outside + inside) / softness)


def soft_ellipsoid_density(p, center, radii, peak, softness):
    q = (p - np.asarray(center)) / np.asarray(radii)
    # first-order signed distance of an ellipsoid
    sdf = (np.linalg.norm(q, axis=-1) - 1.0) * np.min(radii)
    return peak * _sigmoid(-sdf / softness)


def solid_texture(p, base, amp, freq, phase):
    """Smooth 3-D colour field ``base + amp * sin(freq . p + phase)`` per channel."""
    base = np.asarray(base, dtype=np.float64)
    arg = p @ np.asarray(freq, dtype=np.float64).T + np.asarray(phase, dtype=np.float64)
    return np.clip(base + np.asarray(amp) * np.sin(arg), 0.0, 1.0)


@dataclass
class MovingObject:
    shape: str                          # "box" or "ellipsoid"
    size: Tuple[float, float, float]    # half extents / radii
    color: Tuple[float, float, float]
    positions: List[Tuple[float, float, float]]
    switch_frames: List[int]            # position i holds from switch_frames[i-1] to switch_frames[i]

    def position_at(self, t: int):
        k = int(np.searchsorted(np.asarray(self.switch_frames), t, side="right"))
        return np.asarray(self.positions[k], dtype=np.float64)


@dataclass
class SyntheticSceneSpec:
    name: str = "toy-kitchen"
    width: int = 64
    height: int = 64
    focal: float = 56.0
    frames: int = 96
    near: float = 0.1
    far: float = 7.0                   # past the farthest upper room corner from any eye
    samples: int = 512
    seed: int = 0
    room_half: Tuple[float, float, float] = (2.6, 1.6, 2.6)
    room_center: Tuple[float, float, float] = (0.0, 0.6, 0.0)
    table_center: Tuple[float, float, float] = (0.0, -0.35, 0.0)
    table_half: Tuple[float, float, float] = (1.0, 0.08, 0.7)
    peak_density: float = 25.0
    softness: float = 0.08
    objects: List[MovingObject] = field(default_factory=list)
    actor: bool = True
    actor_center: Tuple[float, float, float] = (0.22, 0.28, 0.9)
    actor_radii: Tuple[float, float, float] = (0.13, 0.1, 0.1)
    actor_softness: float = 0.03
    actor_color: Tuple[float, float, float] = (0.85, 0.6, 0.45)
    orbit_radius: float = 2.0
    orbit_height: float = 0.75
    orbit_span: float = 2.2            # radians between the ends of the arc
    orbit_sweeps: float = 3.0          # passes along the arc over the clip
    jitter: float = 0.15               # eye offset, radial (relative) and vertical
    look_jitter: float = 0.3           # offset of the look-at target, head-turn scale

    def validate(self):
        if self.width < 4 or self.height < 4:
            raise SpecError("width", "image must be at least 4x4")
        if self.focal <= 0:
            raise SpecError("focal", "must be positive")
        if self.frames < 32:
            raise SpecError("frames", "need at least 32 frames")
        if not 0 < self.near < self.far:
            raise SpecError("near", "need 0 < near < far")
        if self.orbit_sweeps <= 0:
            raise SpecError("orbit_sweeps", "must be positive")
        if self.samples < 2:
            raise SpecError("samples", "need at least 2 samples per ray")
        if self.peak_density <= 0 or self.softness <= 0 or self.actor_softness <= 0:
            raise SpecError("peak_density", "density parameters must be positive")
        for j, o in enumerate(self.objects):
            if o.shape not in ("box", "ellipsoid"):
                raise SpecError(f"objects[{j}].shape", f"unknown shape {o.shape!r}")
            if len(o.positions) != len(o.switch_frames) + 1:
                raise SpecError(f"objects[{j}].switch_frames", "need one switch per extra position")
            if list(o.switch_frames) != sorted(o.switch_frames):
                raise SpecError(f"objects[{j}].switch_frames", "must be increasing")
            if any(s <= 0 or s >= self.frames for s in o.switch_frames):
                raise SpecError(f"objects[{j}].switch_frames", "must lie inside the clip")
        return self

    def to_dict(self):
        d = asdict(self)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise SpecError(sorted(unknown)[0], "unknown field")
        d = dict(d)
        objs = []
        for j, o in enumerate(d.pop("objects", [])):
            try:
                objs.append(MovingObject(o["shape"], tuple(o["size"]), tuple(o["color"]),
                                         [tuple(p) for p in o["positions"]],
                                         list(o.get("switch_frames", []))))
            except (KeyError, TypeError) as exc:
                raise SpecError(f"objects[{j}]", f"malformed object ({exc})") from None
        for k in ("room_half", "room_center", "table_center", "table_half", "actor_center",
                  "actor_radii", "actor_color"):
            if k in d:
                d[k] = tuple(d[k])
        try:
            spec = cls(objects=objs, **d)
        except TypeError as exc:
            raise SpecError("spec", str(exc)) from None
        return spec.validate()


def toy_kitchen(**overrides) -> SyntheticSceneSpec:
    """Default benchmark: two burst-moving objects (one jump, two jumps) and an actor.

    The jumps sit at T/2 for the box and at T/3, 2T/3 for the ellipsoid, so
    the layout holds for any frame count.
    """
    spec = SyntheticSceneSpec()
    for k, v in overrides.items():
        if not hasattr(spec, k):
            raise SpecError(k, "unknown field")
        setattr(spec, k, v)
    if "objects" not in overrides:
        T = spec.frames
        spec.objects = [
            MovingObject("box", (0.2, 0.14, 0.2), (0.85, 0.15, 0.15),
                         [(-0.45, -0.13, 0.2), (0.5, -0.13, -0.25)], [T // 2]),
            MovingObject("ellipsoid", (0.2, 0.16, 0.2), (0.15, 0.3, 0.85),
                         [(0.35, -0.11, 0.3), (-0.4, -0.11, -0.3), (0.05, -0.11, -0.05)],
                         [T // 3, (2 * T) // 3]),
        ]
    return spec.validate()


class AnalyticScene:
    """Density and colour of each layer at arbitrary points.

    ``query`` returns per-layer ``(sigma, color)`` for background (world
    frame), objects (world frame, time dependent) and actor (camera frame).
    """

    def __init__(self, spec: SyntheticSceneSpec):
        self.spec = spec.validate()
        rng = np.random.default_rng(spec.seed)
        self._wall_freq = rng.uniform(-1.6, 1.6, size=(3, 3))
        self._wall_phase = rng.uniform(0, 2 * np.pi, size=3)
        self._table_freq = rng.uniform(-2.5, 2.5, size=(3, 3))
        self._table_phase = rng.uniform(0, 2 * np.pi, size=3)

    # -- layers ------------------------------------------------------------
    def background(self, pw):
        s = self.spec
        c = np.asarray(s.room_center)
        q = np.abs(pw - c) - np.asarray(s.room_half)
        # wall shell: dense outside the inner room box
        d_out = q.max(axis=-1)
        sig_wall = s.peak_density * _sigmoid(d_out / s.softness)
        sig_table = soft_box_density(pw, s.table_center, s.table_half, s.peak_density, s.softness)
        col_wall = solid_texture(pw, (0.62, 0.6, 0.52), (0.22, 0.2, 0.2), self._wall_freq, self._wall_phase)
        col_table = solid_texture(pw, (0.55, 0.4, 0.25), (0.12, 0.1, 0.08), self._table_freq,
                                  self._table_phase)
        sig = sig_wall + sig_table
        share = np.divide(sig_table, sig, out=np.zeros_like(sig), where=sig > 0)[..., None]
        return sig, (1 - share) * col_wall + share * col_table

    def objects(self, pw, t: int):
        s = self.spec
        sig = np.zeros(pw.shape[:-1])
        col = np.zeros(pw.shape)
        for o in s.objects:
            pos = o.position_at(t)
            if o.shape == "box":
                d = soft_box_density(pw, pos, o.size, s.peak_density, s.softness)
            else:
                d = soft_ellipsoid_density(pw, pos, o.size, s.peak_density, s.softness)
            # mild shading so objects are not flat
            shade = 0.85 + 0.15 * np.tanh((pw[..., 1] - pos[1]) / max(o.size[1], 1e-3))
            sig = sig + d
            col = col + d[..., None] * (np.asarray(o.color) * shade[..., None])
        col = np.divide(col, sig[..., None], out=np.zeros_like(col), where=sig[..., None] > 0)
        return sig, np.clip(col, 0.0, 1.0)

    def actor(self, pc):
        s = self.spec
        if not s.actor:
            return np.zeros(pc.shape[:-1]), np.zeros(pc.shape)
        sig = soft_ellipsoid_density(pc, s.actor_center, s.actor_radii, s.peak_density, s.actor_softness)
        shade = 0.8 + 0.2 * np.tanh(-(pc[..., 0] - s.actor_center[0]) / s.actor_radii[0])
        col = np.clip(np.asarray(s.actor_color) * shade[..., None], 0.0, 1.0)
        return sig, np.broadcast_to(col, pc.shape).copy()

    def query(self, pw, pc, t: int):
        return {"b": self.background(pw), "f": self.objects(pw, t), "a": self.actor(pc)}

    # -- cameras -----------------------------------------------------------
    def intrinsics(self) -> CameraIntrinsics:
        s = self.spec
        return CameraIntrinsics(s.focal, s.focal, s.width / 2.0, s.height / 2.0, s.width, s.height)

    def poses(self) -> List[Pose]:
        s = self.spec
        out = []
        target0 = np.array([0.0, -0.3, 0.0])
        for t in range(s.frames):
            u = t / (s.frames - 1)
            # back-and-forth passes revisit each view at several times
            ang = -0.5 * s.orbit_span * np.cos(np.pi * s.orbit_sweeps * u)
            rad = s.orbit_radius * (1.0 + s.jitter * np.sin(2 * np.pi * 3.7 * u))
            eye = np.array([rad * np.sin(ang), s.orbit_height + s.jitter * np.sin(2 * np.pi * 5.3 * u + 1.0),
                            -rad * np.cos(ang)])
            target = target0 + s.look_jitter * np.array([np.sin(2 * np.pi * 4.3 * u),
                                                         0.5 * np.cos(2 * np.pi * 2.7 * u),
                                                         0.5 * np.sin(2 * np.pi * 3.1 * u + 0.5)])
            out.append(Pose.look_at(eye, target))
        return out


class AnalyticField:
    """The analytic layers behind the learned-field interface ``field(batch, frames)``.

    Lets the engine's own sampler and compositor render a synthetic scene.
    """

    def __init__(self, scene: AnalyticScene):
        self.scene = scene

    def __call__(self, batch, frames, **_):
        R, S = batch.depths.shape
        frames = np.asarray(frames)
        out = StreamSample()
        for p in ("b", "f", "a"):
            out.sigma[p] = np.zeros((R, S))
            out.color[p] = np.zeros((R, S, 3))
        for t in np.unique(frames):
            rows = frames == t
            layers = self.scene.query(batch.points_world[rows], batch.points_camera[rows], int(t))
            for p, (sig, col) in layers.items():
                out.sigma[p][rows] = sig
                out.color[p][rows] = col
        return out


def march_frame(scene: AnalyticScene, pose: Pose, t: int, samples: Optional[int] = None,
                intrinsics: Optional[CameraIntrinsics] = None):
    """Dense midpoint ray marching of one frame.

    Returns ``(rgb (H, W, 3), layers (H, W, 3))`` where ``layers`` are the
    composited pseudo-colours of (background, objects, actor).
    """
    s = scene.spec
    n = s.samples if samples is None else samples
    intr = scene.intrinsics() if intrinsics is None else intrinsics
    dirs = intr.camera_directions()
    edges = np.linspace(s.near, s.far, n + 1)
    depths = 0.5 * (edges[:-1] + edges[1:])
    delta = np.broadcast_to(segment_lengths(depths, s.far), (len(dirs), n))
    pc = depths[None, :, None] * dirs[:, None, :]
    pw = pc @ pose.rotation.T + pose.translation
    layers = scene.query(pw, pc, t)
    sigma = np.stack([layers[p][0] for p in ("b", "f", "a")], axis=-1)
    color = np.stack([layers[p][1] for p in ("b", "f", "a")], axis=-2)
    rgb, mask = kernels.composite_principled(sigma, color, delta)
    h, w = intr.height, intr.width
    return rgb.reshape(h, w, 3), mask.reshape(h, w, 3)


def synthesize_scene(spec: SyntheticSceneSpec):
    """Render every frame and ground truth.

    Returns ``(dataset, layer_masks)`` with ``layer_masks`` ``(T, H, W, 3)``;
    the dataset carries binary masks (objects ∪ actor at opacity 0.5) for all
    frames.
    """
    spec.validate()
    scene = AnalyticScene(spec)
    intr = scene.intrinsics()
    poses = scene.poses()
    images, layer_list = [], []
    for t, pose in enumerate(poses):
        rgb, layers = march_frame(scene, pose, t)
        images.append(rgb)
        layer_list.append(layers)
    layers = np.stack(layer_list)
    binary = (layers[..., 1] + layers[..., 2]) >= MASK_THRESHOLD
    masks = {t: binary[t] for t in range(spec.frames)}
    layer_masks = {t: layers[t] for t in range(spec.frames)}
    ds = SceneDataset(intr, poses, np.clip(np.stack(images), 0.0, 1.0), assign_splits(spec.frames),
                      spec.near, spec.far, masks, layer_masks, name=spec.name)
    return ds, layers
