"""Transmittance, multi-material mixing and volumetric compositing.

Materials are the streams ``b`` (background), ``f`` (foreground objects) and
``a`` (actor).  Along a ray with per-sample segment lengths ``δ_k`` the
visibility of sample ``k`` is ``v_k = exp(-Σ_{q<k} Σ_p σ^p_q δ_q)`` and each
material receives a share ``w^p`` of the light absorbed in the segment.

All functions take numpy arrays or :class:`~voldiff.nn.Tensor` objects; the
compositing itself always goes through the tensor ops so it differentiates.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np

from . import kernels
from .nn import tensor as tt
from .nn.tensor import Tensor

MATERIALS = ("b", "f", "a")
PSEUDO_COLORS = {"b": (1.0, 0.0, 0.0), "f": (0.0, 1.0, 0.0), "a": (0.0, 0.0, 1.0)}
BETA_MIN = 0.03
SIGMA_EPS = 1e-10
NAIVE, PRINCIPLED = "naive", "principled"

# test hook for the mutation check in `voldiff check`
_FAULT: Optional[str] = None


class CompositingError(ValueError):
    pass


def transmission(sigma, delta):
    """``exp(-δ σ)``; rejects negative densities."""
    s = sigma.data if isinstance(sigma, Tensor) else np.asarray(sigma, dtype=np.float64)
    if np.any(s < 0):
        raise CompositingError("negative density")
    d = delta.data if isinstance(delta, Tensor) else np.asarray(delta)
    if np.any(d <= 0):
        raise CompositingError("segment lengths must be positive")
    if isinstance(sigma, Tensor) or isinstance(delta, Tensor):
        return tt.exp(-(tt.as_tensor(sigma) * delta))
    return np.exp(-s * d)


def mix_naive(transmissions):
    """Per-material weights ``1 - T^p`` (each material treated independently)."""
    out = []
    for T in transmissions:
        if isinstance(T, Tensor):
            out.append(1.0 - T)
        else:
            T = np.asarray(T, dtype=np.float64)
            if np.any(T <= 0) or np.any(T > 1):
                raise CompositingError("transmission outside (0, 1]")
            out.append(1.0 - T)
    return out


def mix_principled(sigmas, transmissions, delta=None, debug=False, tol=1e-9):
    """Density-share weights ``σ^p / Σσ · (1 - Π_q T^q)``.

    When every density is zero all weights are zero; the denominator is
    guarded by ``max(Σσ, 1e-10)``.  In ``debug`` mode the pairs
    ``(σ^p, T^p)`` are checked against ``T = exp(-δ σ)``.
    """
    if len(sigmas) != len(transmissions) or not sigmas:
        raise CompositingError("need one transmission per density")
    if debug:
        if delta is None:
            raise CompositingError("debug consistency check needs the segment length")
        d = delta.data if isinstance(delta, Tensor) else np.asarray(delta)
        for s, T in zip(sigmas, transmissions):
            s = s.data if isinstance(s, Tensor) else np.asarray(s)
            T = T.data if isinstance(T, Tensor) else np.asarray(T)
            if np.any(s < 0):
                raise CompositingError("negative density")
            if np.max(np.abs(np.exp(-d * s) - T), initial=0.0) > tol:
                raise CompositingError("densities and transmissions are inconsistent")

    use_tensor = any(isinstance(x, Tensor) for x in list(sigmas) + list(transmissions))
    if not use_tensor:
        sig = [np.asarray(s, dtype=np.float64) for s in sigmas]
        trans = [np.asarray(T, dtype=np.float64) for T in transmissions]
        total = sum(sig[1:], sig[0])
        absorbed = 1.0 - np.prod(np.stack(np.broadcast_arrays(*trans)), axis=0)
        denom = np.maximum(total, SIGMA_EPS)
        w = [s / denom * absorbed for s in sig]
    else:
        sig = [tt.as_tensor(s) for s in sigmas]
        trans = [tt.as_tensor(T) for T in transmissions]
        total = sig[0]
        prod = trans[0]
        for s, T in zip(sig[1:], trans[1:]):
            total = total + s
            prod = prod * T
        absorbed = 1.0 - prod
        denom = tt.clamp_min(total, SIGMA_EPS)
        w = [s / denom * absorbed for s in sig]
    if _FAULT == "principled-sign":
        w = [-x for x in w]
    return w


def subsegment_oracle(sigmas, delta: float, n: int) -> np.ndarray:
    """Absorption shares when the segment is cut into ``P n`` alternating pieces.

    Materials are laid out cyclically ``1..P`` and the cycle repeated ``n``
    times, each piece carrying transmission ``(T^p)^{1/n}``.  The result
    tends to :func:`mix_principled` as ``n`` grows, with an error of order
    ``δ Σσ / n``.
    """
    if n < 1:
        raise CompositingError("subdivision count must be >= 1")
    sig = np.asarray(sigmas, dtype=np.float64)
    if np.any(sig < 0):
        raise CompositingError("negative density")
    return kernels.subsegment_weights(sig, delta, n)


@dataclass
class StreamSample:
    """Per-sample outputs of every material along a batch of rays.

    ``sigma[p]`` and ``beta[p]`` are ``(R, S)``, ``color[p]`` is ``(R, S, 3)``.
    Materials missing from the dicts are inactive.
    """

    sigma: Dict[str, object] = field(default_factory=dict)
    color: Dict[str, object] = field(default_factory=dict)
    beta: Dict[str, object] = field(default_factory=dict)

    @property
    def materials(self):
        return [p for p in MATERIALS if p in self.sigma]


@dataclass
class RenderOutput:
    color: object            # (R, 3)
    beta: object             # (R,)  includes beta_min
    mask: object             # (R, 3) channels (b, f, a)
    weights: np.ndarray      # (R, S) total per-sample compositing weight
    opacity: np.ndarray      # (R,)  1 - v_{M+1}
    sigma: Optional[StreamSample] = None


def _mixing_weights(samples: StreamSample, deltas, mode):
    mats = samples.materials
    taus = [tt.as_tensor(samples.sigma[p]) * deltas for p in mats]
    if mode == NAIVE:
        ws = [tt.neg_expm1_neg(tau) for tau in taus]
    elif mode == PRINCIPLED:
        total_tau = taus[0]
        total_sig = tt.as_tensor(samples.sigma[mats[0]])
        for p, tau in zip(mats[1:], taus[1:]):
            total_tau = total_tau + tau
            total_sig = total_sig + samples.sigma[p]
        absorbed = tt.neg_expm1_neg(total_tau)
        denom = tt.clamp_min(total_sig, SIGMA_EPS)
        ws = [tt.as_tensor(samples.sigma[p]) / denom * absorbed for p in mats]
        if _FAULT == "principled-sign":
            ws = [-w for w in ws]
    else:
        raise CompositingError(f"unknown mixing mode {mode!r}")
    total_tau = taus[0]
    for tau in taus[1:]:
        total_tau = total_tau + tau
    vis = tt.exp(-tt.cumsum_exclusive(total_tau, axis=1))
    return mats, ws, vis, total_tau


def composite(samples: StreamSample, deltas, mode=PRINCIPLED, payload="color", beta_min=BETA_MIN):
    """Composite one payload: ``"color"`` (R, 3), ``"uncertainty"`` (R,) or ``"mask"`` (R, 3)."""
    out = render_samples(samples, deltas, mode, beta_min=beta_min, payloads=(payload,))
    return {"color": out.color, "uncertainty": out.beta, "mask": out.mask}[payload]


def render_samples(samples: StreamSample, deltas, mode=PRINCIPLED, beta_min=BETA_MIN,
                   payloads=("color", "uncertainty", "mask")) -> RenderOutput:
    """Composite colour, uncertainty and layer mask along each ray."""
    if not samples.materials:
        raise CompositingError("no active materials")
    first = samples.sigma[samples.materials[0]]
    shape = first.shape
    if len(shape) != 2 or shape[1] == 0:
        raise CompositingError("empty sample list")
    for p in samples.materials:
        s = samples.sigma[p]
        if np.any((s.data if isinstance(s, Tensor) else np.asarray(s)) < 0):
            raise CompositingError(f"negative density in material {p}")
    d = np.asarray(deltas)
    if d.shape != shape:
        raise CompositingError(f"segment lengths {d.shape} do not match samples {shape}")
    dtype = first.dtype
    d = d.astype(dtype, copy=False)

    mats, ws, vis, total_tau = _mixing_weights(samples, d, mode)
    contrib = {p: vis * w for p, w in zip(mats, ws)}
    n_rays = shape[0]

    color = beta = mask = None
    if "color" in payloads:
        for p in mats:
            c = tt.tsum(tt.reshape(contrib[p], shape + (1,)) * samples.color[p], axis=1)
            color = c if color is None else color + c
    if "uncertainty" in payloads:
        beta = None
        for p in mats:
            if p not in samples.beta:
                continue
            b = tt.tsum(contrib[p] * samples.beta[p], axis=1)
            beta = b if beta is None else beta + b
        beta = (beta + beta_min) if beta is not None else Tensor(np.full(n_rays, beta_min, dtype=dtype))
    if "mask" in payloads:
        cols = []
        for p in MATERIALS:
            if p in contrib:
                cols.append(tt.tsum(contrib[p], axis=1))
            else:
                cols.append(Tensor(np.zeros(n_rays, dtype=dtype)))
        mask = tt.stack(cols, axis=1)

    weights = sum(c.data for c in contrib.values())
    opacity = -np.expm1(-total_tau.data.sum(axis=1))
    return RenderOutput(color, beta, mask, weights, opacity, samples)
