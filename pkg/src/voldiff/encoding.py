"""Fourier positional encoding and the harmonic low-rank time code."""

from __future__ import annotations

import numpy as np

from . import kernels
from .nn import tensor as tt
from .nn.tensor import Tensor

CODE_WIDTH = 17
DEFAULT_P_BASIS = 6


class EncodingError(ValueError):
    pass


def encoded_width(d: int, frequencies: int) -> int:
    return d + 2 * frequencies * d


def positional_encoding(x, frequencies: int, dtype=None):
    """``[x, sin(2^0 π x), cos(2^0 π x), ..., sin(2^{L-1} π x), cos(2^{L-1} π x)]``.

    Within one frequency the layout is per component: ``sin x_1, cos x_1,
    sin x_2, cos x_2, ...``.  Accepts a numpy array or a :class:`Tensor` of
    shape ``(N, d)`` (a 1-D input is treated as a single row) and returns the
    same kind.  ``dtype`` sets the output precision of the no-grad path.
    """
    if frequencies < 1:
        raise EncodingError(f"need at least one frequency, got {frequencies}")
    is_tensor = isinstance(x, Tensor)
    data = x.data if is_tensor else np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise EncodingError("positional encoding input is not finite")
    squeeze = data.ndim == 1
    if squeeze:
        x = tt.reshape(x, (1, -1)) if is_tensor else data[None, :]
        data = data[None, :]
    n, d = data.shape

    if not is_tensor or not x.requires_grad:
        out = kernels.fourier_features(data, frequencies, dtype or data.dtype)
        if squeeze:
            out = out[0]
        return Tensor(out) if is_tensor else out

    scales = (np.pi * 2.0 ** np.arange(frequencies)).astype(data.dtype)[None, :, None]
    arg = tt.reshape(x, (n, 1, d)) * scales
    feats = tt.stack([tt.sin(arg), tt.cos(arg)], axis=-1).reshape(n, 2 * frequencies * d)
    out = tt.concat([x, feats], axis=1)
    if squeeze:
        out = tt.reshape(out, (-1,))
    return out


def harmonic_basis(t_norm, p_basis: int = DEFAULT_P_BASIS) -> np.ndarray:
    """``[1, t, sin 2πt, cos 2πt, sin 4πt, cos 4πt, ...]`` truncated to ``p_basis``.

    Vectorised over ``t_norm``: returns shape ``t_norm.shape + (p_basis,)``.
    """
    if p_basis < 2 or p_basis % 2:
        raise EncodingError(f"basis size must be even and >= 2, got {p_basis}")
    t = np.asarray(t_norm, dtype=np.float64)
    if np.any(t < 0) or np.any(t > 1) or not np.all(np.isfinite(t)):
        raise EncodingError("normalised time must lie in [0, 1]")
    cols = [np.ones_like(t), t]
    for k in range(1, (p_basis - 2) // 2 + 1):
        cols.append(np.sin(2 * np.pi * k * t))
        cols.append(np.cos(2 * np.pi * k * t))
    return np.stack(cols, axis=-1)


def basis_lipschitz(p_basis: int = DEFAULT_P_BASIS) -> float:
    """Upper bound on ``|dB/dt|``: sqrt(1 + Σ_k (2πk)^2)."""
    ks = np.arange(1, (p_basis - 2) // 2 + 1)
    return float(np.sqrt(1.0 + np.sum((2 * np.pi * ks) ** 2)))


def normalized_time(t_index, total_frames: int):
    if total_frames < 2:
        raise EncodingError(f"need at least two frames, got {total_frames}")
    t = np.asarray(t_index)
    if np.any(t < 0) or np.any(t >= total_frames):
        raise EncodingError(f"frame index outside [0, {total_frames})")
    return t / (total_frames - 1)


def frame_code(t_index, total_frames: int, gamma):
    """``z_t = B(t / (T-1)) Γ``; vectorised over ``t_index``.

    ``gamma`` is a ``(P_basis, D)`` array or :class:`Tensor`; the result is a
    Tensor when ``gamma`` is, so gradients reach the coefficients.
    """
    is_tensor = isinstance(gamma, Tensor)
    g = gamma.data if is_tensor else np.asarray(gamma, dtype=np.float64)
    if g.ndim != 2:
        raise EncodingError("motion coefficients must be a (P_basis, D) matrix")
    basis = harmonic_basis(normalized_time(t_index, total_frames), g.shape[0]).astype(g.dtype)
    squeeze = basis.ndim == 1
    b2 = basis[None, :] if squeeze else basis
    if is_tensor:
        z = tt.matmul(Tensor(b2), gamma)
        return tt.reshape(z, (-1,)) if squeeze else z
    z = b2 @ g
    return z[0] if squeeze else z


def init_motion_coefficients(rng: np.random.Generator, p_basis: int = DEFAULT_P_BASIS,
                             width: int = CODE_WIDTH, std: float = 0.01) -> np.ndarray:
    return rng.normal(0.0, std, size=(p_basis, width))
