"""Pinhole cameras, rigid poses, ray casting and depth sampling.

Conventions: camera looks down +z, image x grows to the right and image y
grows downwards; a pixel ``(u, v)`` is (column, row) and back-projects to
``((u - cx) / fx, (v - cy) / fy, 1)``.  Poses map camera coordinates to world
coordinates (``x_world = R x_cam + t``).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels

ORTHO_TOL = 1e-6
WEIGHT_EPS = 1e-5


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise GeometryError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise GeometryError(
                f"principal point ({self.cx}, {self.cy}) outside a {self.width}x{self.height} image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def num_pixels(self) -> int:
        return self.width * self.height

    def pixel_grid(self) -> np.ndarray:
        """All pixels as ``(H*W, 2)`` integer ``(u, v)``, row-major."""
        v, u = np.mgrid[0:self.height, 0:self.width]
        return np.stack([u.ravel(), v.ravel()], axis=1)

    def camera_directions(self, pixels=None) -> np.ndarray:
        """Unit camera-frame directions for ``pixels`` (default: every pixel)."""
        pix = self.pixel_grid() if pixels is None else np.atleast_2d(np.asarray(pixels))
        d = np.stack([(pix[:, 0] - self.cx) / self.fx,
                      (pix[:, 1] - self.cy) / self.fy,
                      np.ones(len(pix))], axis=1)
        return d / np.linalg.norm(d, axis=1, keepdims=True)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


class Pose:
    """Rigid world-from-camera transform."""

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation, check=True):
        R = np.array(rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(translation, dtype=np.float64).reshape(3)
        if check:
            err = np.abs(R.T @ R - np.eye(3)).max()
            if err > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
                raise GeometryError(f"rotation is not orthonormal with det +1 (error {err:.2e})")
        self.rotation = R
        self.translation = t

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, check=True) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise GeometryError(f"pose matrix must be 4x4, got {m.shape}")
        if not np.allclose(m[3], [0, 0, 0, 1], atol=1e-9):
            raise GeometryError("pose matrix last row must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3], check=check)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 1.0, 0.0)) -> "Pose":
        """Camera at ``eye`` looking at ``target``; image-down is world ``-up``."""
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z /= np.linalg.norm(z)
        down = -np.asarray(up, dtype=np.float64)
        x = np.cross(down, z)
        x /= np.linalg.norm(x)
        y = np.cross(z, x)
        return cls(np.stack([x, y, z], axis=1), eye)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def rotate(self, vectors) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.rotation.T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation, check=False)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other`` (apply ``other`` first)."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation, check=False)

    def __eq__(self, other):
        return (isinstance(other, Pose) and np.array_equal(self.rotation, other.rotation)
                and np.array_equal(self.translation, other.translation))

    def __repr__(self):
        return f"Pose(t={np.round(self.translation, 4).tolist()})"


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray


def pixel_to_ray(intrinsics: CameraIntrinsics, pose: Pose, pixel):
    """Return ``(world_ray, camera_ray)`` through integer pixel ``(u, v)``."""
    u, v = int(pixel[0]), int(pixel[1])
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise GeometryError(f"pixel ({u}, {v}) outside the {intrinsics.width}x{intrinsics.height} image")
    d_cam = intrinsics.camera_directions([[u, v]])[0]
    cam = Ray(np.zeros(3), d_cam)
    world = Ray(pose.translation.copy(), pose.rotation @ d_cam)
    return world, cam


def _check_bounds(near, far):
    if not (0 <= near < far):
        raise GeometryError(f"need 0 <= near < far, got near={near}, far={far}")


def sample_depths(near: float, far: float, count: int, stratified: bool = False,
                  rng: Optional[np.random.Generator] = None, n_rays: Optional[int] = None):
    """Per-bin depths over ``count`` uniform bins of ``[near, far]``.

    Deterministic mode returns bin midpoints; stratified mode draws one
    uniform sample inside each bin.  Shape ``(count,)`` or ``(n_rays, count)``.
    """
    if not near < far:
        raise GeometryError(f"need near < far, got near={near}, far={far}")
    if near < 0:
        raise GeometryError(f"near must be nonnegative, got {near}")
    if count < 2:
        raise GeometryError(f"need at least 2 samples, got {count}")
    edges = np.linspace(near, far, count + 1)
    lo, width = edges[:-1], np.diff(edges)
    shape = (count,) if n_rays is None else (n_rays, count)
    if stratified:
        if rng is None:
            raise GeometryError("stratified sampling needs an rng")
        offs = rng.random(shape)
    else:
        offs = np.full(shape, 0.5)
    return lo + width * offs


def bin_edges(depths, near, far):
    """Bins owned by sorted samples: midpoints between neighbours, capped by near/far."""
    depths = np.atleast_2d(depths)
    mids = 0.5 * (depths[:, 1:] + depths[:, :-1])
    n = depths.shape[0]
    return np.concatenate([np.full((n, 1), near), mids, np.full((n, 1), far)], axis=1)


def importance_sample(weights, depths, count: int, near: float, far: float,
                      rng: Optional[np.random.Generator] = None, eps: float = WEIGHT_EPS,
                      merge: bool = True):
    """Inverse-CDF resampling of depths from coarse compositing weights.

    Each coarse depth owns the interval between its neighbours' midpoints
    (clipped to ``[near, far]``).  With ``rng=None`` the quantiles are the
    deterministic grid ``(i + 0.5) / count``.  Returns ``(R, M + count)``
    sorted depths when ``merge`` else the ``(R, count)`` new depths.
    """
    _check_bounds(near, far)
    w = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    d = np.atleast_2d(np.asarray(depths, dtype=np.float64))
    if w.shape != d.shape:
        raise GeometryError(f"weights {w.shape} and depths {d.shape} disagree")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise GeometryError("weights must be finite and nonnegative")
    w = w + eps
    empty = w.sum(axis=1) <= 0
    if np.any(empty):
        w[empty] = 1.0
    edges = bin_edges(d, near, far)
    n = w.shape[0]
    if rng is None:
        u = np.broadcast_to((np.arange(count) + 0.5) / count, (n, count))
    else:
        u = rng.random((n, count))
    fresh = kernels.sample_pdf(edges, w, u)
    fresh = np.clip(fresh, near, far)
    if not merge:
        return fresh
    return np.sort(np.concatenate([d, fresh], axis=1), axis=1)


def segment_lengths(depths, far, far_cap: Optional[float] = None, min_length: float = 1e-10):
    """``ℓ_{k+1} - ℓ_k`` with the last segment running to ``far`` (or ``far_cap``)."""
    d = np.asarray(depths, dtype=np.float64)
    cap = far if far_cap is None else far_cap
    last = np.maximum(cap - d[..., -1:], min_length)
    return np.maximum(np.concatenate([np.diff(d, axis=-1), last], axis=-1), min_length)


@dataclass
class RaySampleBatch:
    """Samples along a batch of rays, in both camera and world frames."""

    depths: np.ndarray          # (R, S) strictly increasing
    points_camera: np.ndarray   # (R, S, 3)
    points_world: np.ndarray    # (R, S, 3)
    deltas: np.ndarray          # (R, S)
    view_dirs: np.ndarray       # (R, 3) unit, world frame

    @property
    def n_rays(self) -> int:
        return self.depths.shape[0]

    @property
    def n_samples(self) -> int:
        return self.depths.shape[1]


def ray_samples(rotations, translations, cam_dirs, depths, far, far_cap=None) -> RaySampleBatch:
    """Place ``depths`` along camera rays and map them to the world.

    ``rotations`` ``(R, 3, 3)`` and ``translations`` ``(R, 3)`` are the
    world-from-camera poses of each ray's frame; ``cam_dirs`` ``(R, 3)`` are
    unit camera-frame directions.
    """
    depths = np.asarray(depths, dtype=np.float64)
    cam_dirs = np.asarray(cam_dirs, dtype=np.float64)
    pc = depths[..., None] * cam_dirs[:, None, :]
    pw = np.einsum("rij,rsj->rsi", rotations, pc) + translations[:, None, :]
    view = np.einsum("rij,rj->ri", rotations, cam_dirs)
    return RaySampleBatch(depths, pc, pw, segment_lengths(depths, far, far_cap), view)
