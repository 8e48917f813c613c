"""Training objectives.

Every loss here returns the *sum* over the rays it is given; :func:`total_loss`
divides by the ray count so the optimiser sees a per-ray average.
"""

from __future__ import annotations

import numpy as np

from ..compositing import StreamSample
from ..nn import tensor as tt
from ..nn.tensor import Tensor

DEFAULT_LAMBDA = 0.01
DYNAMIC = ("f", "a")


class LossError(ValueError):
    pass


def _per_ray_sqerr(pred, target):
    pred = tt.as_tensor(pred)
    diff = pred - np.asarray(target, dtype=pred.dtype)
    sq = tt.square(diff)
    return tt.tsum(sq, axis=-1) if sq.ndim > 1 else sq


def loss_prob(pred, target, beta):
    """``Σ_rays ‖x − f‖² / (2 β²) + log β²``."""
    beta = tt.as_tensor(beta)
    if np.any(beta.data <= 0):
        raise LossError("uncertainty must be positive")
    b2 = tt.square(beta)
    return tt.tsum(_per_ray_sqerr(pred, target) / (2.0 * b2) + tt.log(b2))


def loss_sparse(samples):
    """Sum of foreground and actor densities over every sample of every ray.

    Accepts a :class:`StreamSample` or a list of density arrays/tensors.
    """
    if isinstance(samples, StreamSample):
        sig = [samples.sigma[p] for p in DYNAMIC if p in samples.sigma]
    else:
        sig = list(samples)
    total = None
    for s in sig:
        s = tt.as_tensor(s)
        if np.any(s.data < 0):
            raise LossError("negative density")
        part = tt.tsum(s)
        total = part if total is None else total + part
    return total if total is not None else Tensor(np.asarray(0.0))


def loss_coarse(pred, target):
    """``Σ_rays ‖x − f^coarse‖²``."""
    return tt.tsum(_per_ray_sqerr(pred, target))


def total_loss(target, coarse, fine, lam: float = DEFAULT_LAMBDA):
    """``(L_prob + λ L_sparse + L_coarse) / R`` and its parts (each already divided by R)."""
    target = np.asarray(target)
    n = target.shape[0]
    if n == 0:
        raise LossError("empty batch")
    prob = loss_prob(fine.color, target, fine.beta)
    sparse = loss_sparse(fine.sigma) if fine.sigma is not None else Tensor(np.asarray(0.0))
    crs = loss_coarse(coarse.color, target)
    total = (prob + sparse * lam + crs) * (1.0 / n)
    parts = {"prob": float(prob.data) / n, "sparse": float(sparse.data) / n, "coarse": float(crs.data) / n}
    return total, parts
