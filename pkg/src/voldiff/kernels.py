"""Hot inner loops, each with a numba and a numpy implementation.

The public wrappers dispatch on :data:`voldiff._accel.USE_NUMBA`; both
implementations are importable directly (``*_numba`` / ``*_numpy``) so the
benchmark and the tests can compare them.
"""

from __future__ import annotations

import numpy as np

from ._accel import USE_NUMBA, njit

# ---------------------------------------------------------------------------
# cyclic subsegment absorption (the finite-n mixing construction)


@njit(cache=True)
def subsegment_weights_numba(sigma, delta, n):
    p_count = sigma.shape[0]
    t = np.empty(p_count)
    for p in range(p_count):
        t[p] = np.exp(-sigma[p] * delta / n)
    prefix = np.empty(p_count)
    acc = 1.0
    for p in range(p_count):
        prefix[p] = acc
        acc *= t[p]
    cycle = acc
    out = np.zeros(p_count)
    reach = 1.0
    for _ in range(n):
        for p in range(p_count):
            out[p] += reach * prefix[p] * (1.0 - t[p])
        reach *= cycle
    return out


def subsegment_weights_numpy(sigma, delta, n):
    sigma = np.asarray(sigma, dtype=np.float64)
    t = np.exp(-sigma * delta / n)
    prefix = np.concatenate(([1.0], np.cumprod(t)[:-1]))
    cycle = np.prod(t)
    reach = np.empty(n)
    reach[0] = 1.0
    if n > 1:
        reach[1:] = cycle
        reach = np.cumprod(reach)
    # summing the reach terms in order keeps the rounding comparable to the loop form
    total = np.add.reduce(reach)
    return total * prefix * (1.0 - t)


def subsegment_weights(sigma, delta, n):
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    if USE_NUMBA:
        return subsegment_weights_numba(sigma, float(delta), int(n))
    return subsegment_weights_numpy(sigma, float(delta), int(n))


# ---------------------------------------------------------------------------
# forward-only multi-material compositing with density-share mixing


@njit(cache=True)
def composite_principled_numba(sigma, color, delta):
    n_rays, n_samples, n_mat = sigma.shape
    rgb = np.zeros((n_rays, 3))
    mask = np.zeros((n_rays, n_mat))
    for r in range(n_rays):
        vis = 1.0
        for k in range(n_samples):
            tot = 0.0
            for p in range(n_mat):
                tot += sigma[r, k, p]
            if tot <= 0.0:
                continue
            absorbed = -np.expm1(-tot * delta[r, k])
            for p in range(n_mat):
                w = vis * absorbed * sigma[r, k, p] / tot
                mask[r, p] += w
                for c in range(3):
                    rgb[r, c] += w * color[r, k, p, c]
            vis *= np.exp(-tot * delta[r, k])
    return rgb, mask


def composite_principled_numpy(sigma, color, delta):
    tot = sigma.sum(axis=2)
    tau = tot * delta
    vis = np.exp(-np.concatenate([np.zeros_like(tau[:, :1]), np.cumsum(tau, axis=1)[:, :-1]], axis=1))
    absorbed = -np.expm1(-tau)
    share = np.divide(sigma, tot[..., None], out=np.zeros_like(sigma), where=tot[..., None] > 0)
    w = (vis * absorbed)[..., None] * share
    mask = w.sum(axis=1)
    rgb = np.einsum("rkp,rkpc->rc", w, color)
    return rgb, mask


def composite_principled(sigma, color, delta):
    """Composite ``(R, S, P)`` densities and ``(R, S, P, 3)`` colours.

    Returns ``(rgb (R, 3), layer_mask (R, P))``.
    """
    sigma = np.ascontiguousarray(sigma, dtype=np.float64)
    color = np.ascontiguousarray(color, dtype=np.float64)
    delta = np.ascontiguousarray(delta, dtype=np.float64)
    if USE_NUMBA:
        return composite_principled_numba(sigma, color, delta)
    return composite_principled_numpy(sigma, color, delta)


# ---------------------------------------------------------------------------
# inverse-CDF sampling of a piecewise-constant density over bins


@njit(cache=True)
def sample_pdf_numba(edges, weights, u):
    n_rays, n_bins = weights.shape
    n_draw = u.shape[1]
    out = np.empty((n_rays, n_draw))
    cdf = np.empty(n_bins + 1)
    for r in range(n_rays):
        total = 0.0
        for b in range(n_bins):
            total += weights[r, b]
        cdf[0] = 0.0
        acc = 0.0
        for b in range(n_bins):
            acc += weights[r, b]
            cdf[b + 1] = acc / total
        cdf[n_bins] = 1.0
        for j in range(n_draw):
            x = u[r, j]
            lo = 0
            hi = n_bins
            # largest b with cdf[b] <= x
            while hi - lo > 1:
                mid = (lo + hi) // 2
                if cdf[mid] <= x:
                    lo = mid
                else:
                    hi = mid
            b = lo
            width = cdf[b + 1] - cdf[b]
            frac = 0.0 if width <= 0.0 else (x - cdf[b]) / width
            if frac > 1.0:
                frac = 1.0
            out[r, j] = edges[r, b] + frac * (edges[r, b + 1] - edges[r, b])
    return out


def sample_pdf_numpy(edges, weights, u):
    n_rays, n_bins = weights.shape
    total = weights.sum(axis=1, keepdims=True)
    cdf = np.concatenate([np.zeros((n_rays, 1)), np.cumsum(weights, axis=1) / total], axis=1)
    cdf[:, -1] = 1.0
    # searchsorted on a flattened, row-offset cdf handles all rays at once
    offset = np.arange(n_rays)[:, None] * 2.0
    flat = (cdf[:, :-1] + offset).ravel()
    idx = np.searchsorted(flat, (u + offset).ravel(), side="right").reshape(u.shape) - 1
    idx -= np.arange(n_rays)[:, None] * n_bins
    idx = np.clip(idx, 0, n_bins - 1)
    lo = np.take_along_axis(cdf, idx, axis=1)
    hi = np.take_along_axis(cdf, idx + 1, axis=1)
    width = hi - lo
    frac = np.divide(u - lo, width, out=np.zeros_like(u), where=width > 0)
    frac = np.clip(frac, 0.0, 1.0)
    e0 = np.take_along_axis(edges, idx, axis=1)
    e1 = np.take_along_axis(edges, idx + 1, axis=1)
    return e0 + frac * (e1 - e0)


def sample_pdf(edges, weights, u):
    """Draw ``u``-quantiles from per-ray histograms.

    ``edges`` is ``(R, B+1)`` increasing, ``weights`` ``(R, B)`` nonnegative
    with positive row sums, ``u`` ``(R, N)`` in ``[0, 1)``.
    """
    edges = np.ascontiguousarray(edges, dtype=np.float64)
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    u = np.ascontiguousarray(u, dtype=np.float64)
    if USE_NUMBA:
        return sample_pdf_numba(edges, weights, u)
    return sample_pdf_numpy(edges, weights, u)


# ---------------------------------------------------------------------------
# average precision over a ranked list


@njit(cache=True)
def ranked_ap_numba(ranked_scores, ranked_gt):
    n = ranked_gt.shape[0]
    n_pos = 0
    for i in range(n):
        if ranked_gt[i]:
            n_pos += 1
    if n_pos == 0:
        return np.nan
    hits = 0
    acc = 0.0
    group_hits = 0
    for i in range(n):
        if ranked_gt[i]:
            hits += 1
            group_hits += 1
        # close the group of tied scores at its last member
        if i == n - 1 or ranked_scores[i + 1] != ranked_scores[i]:
            if group_hits:
                acc += group_hits * (hits / (i + 1.0))
            group_hits = 0
    return acc / n_pos


def ranked_ap_numpy(ranked_scores, ranked_gt):
    ranked_gt = np.asarray(ranked_gt, dtype=bool)
    ranked_scores = np.asarray(ranked_scores)
    n_pos = int(ranked_gt.sum())
    if n_pos == 0:
        return float("nan")
    n = ranked_gt.size
    last = np.ones(n, dtype=bool)
    last[:-1] = ranked_scores[1:] != ranked_scores[:-1]
    hits = np.cumsum(ranked_gt)
    ends = np.flatnonzero(last)
    tp = hits[ends]
    new_tp = np.diff(np.concatenate(([0], tp)))
    return float(np.sum(new_tp * tp / (ends + 1.0)) / n_pos)


def ranked_ap(ranked_scores, ranked_gt):
    """AP of descending-sorted scores; tied scores act as one threshold.

    Equivalent to ``Σ (R_k - R_{k-1}) P_k`` over the distinct score values,
    so a constant score map gives exactly the positive rate.
    """
    ranked_scores = np.ascontiguousarray(ranked_scores, dtype=np.float64)
    ranked_gt = np.ascontiguousarray(ranked_gt, dtype=np.bool_)
    if USE_NUMBA:
        return float(ranked_ap_numba(ranked_scores, ranked_gt))
    return ranked_ap_numpy(ranked_scores, ranked_gt)


# ---------------------------------------------------------------------------
# Fourier features [x, sin(2^l π x_p), cos(2^l π x_p), ...]


@njit(cache=True)
def fourier_features_numba(x, frequencies, out):
    # one sin/cos per component, then double-angle steps up the octaves
    n, d = x.shape
    for i in range(n):
        for p in range(d):
            out[i, p] = x[i, p]
            a = np.pi * x[i, p]
            s = np.sin(a)
            c = np.cos(a)
            for l in range(frequencies):
                base = d + 2 * (l * d + p)
                out[i, base] = s
                out[i, base + 1] = c
                s, c = 2.0 * s * c, (c - s) * (c + s)
    return out


def fourier_features_numpy(x, frequencies, out):
    n, d = x.shape
    scales = np.pi * 2.0 ** np.arange(frequencies)
    arg = x[:, None, :] * scales[None, :, None]
    out[:, :d] = x
    out[:, d:] = np.stack([np.sin(arg), np.cos(arg)], axis=-1).reshape(n, -1)
    return out


def fourier_features(x, frequencies: int, dtype=np.float64):
    """Encoding of an ``(N, d)`` float64 array, written straight into ``dtype``."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    out = np.empty((x.shape[0], x.shape[1] * (1 + 2 * frequencies)), dtype=dtype)
    if USE_NUMBA:
        return fourier_features_numba(x, frequencies, out)
    return fourier_features_numpy(x, frequencies, out)
