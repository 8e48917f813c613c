"""Segmentation and reconstruction metrics.

Per frame: average precision of the foreground ranking and PSNR over the
whole image, the background and the foreground.  Per scene and overall:
means over frames, then over scenes, plus a precision/recall curve pooled
over every evaluated pixel.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import kernels

PSNR_CAP = 99.0
REPORT_TEXT = "report.txt"
REPORT_JSON = "report.json"
PR_CURVE = "pr_curve.txt"


class UndefinedMetric(ValueError):
    pass


def average_precision(scores, gt) -> float:
    """Area under the step precision/recall curve over every distinct score.

    Each group of tied scores is one threshold, so the result does not
    depend on pixel order and a constant score gives the positive rate.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=bool).ravel()
    if s.shape != g.shape:
        raise ValueError(f"scores {s.shape} and ground truth {g.shape} differ")
    if not g.any():
        raise UndefinedMetric("no positive pixels")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    order = np.argsort(-s, kind="stable")
    return kernels.ranked_ap(s[order], g[order])


def region_mse(pred, gt, region=None) -> float:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(gt, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError(f"image shapes differ: {p.shape} vs {t.shape}")
    err = (p - t) ** 2
    if region is None:
        return float(err.mean())
    m = np.asarray(region, dtype=bool)
    if m.shape != p.shape[:m.ndim]:
        raise ValueError(f"region {m.shape} does not match image {p.shape}")
    if not m.any():
        raise UndefinedMetric("empty region")
    return float(err[m].mean())


def psnr_from_mse(mse: float) -> float:
    return math.inf if mse <= 0 else -10.0 * math.log10(mse)


def psnr(pred, gt, region=None) -> float:
    """``-10 log10(MSE)`` over ``region`` (all pixels by default); ``inf`` when exact."""
    return psnr_from_mse(region_mse(pred, gt, region))


@dataclass
class PRCurve:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray

    def area(self) -> float:
        """Step-wise area ``Σ (r_i - r_{i-1}) p_i`` with recall starting at 0."""
        r = np.concatenate([[0.0], self.recall])
        return float(np.sum(np.diff(r) * self.precision))

    def to_text(self) -> str:
        lines = ["# precision recall"]
        lines += [f"{p:.6f} {r:.6f}" for p, r in zip(self.precision, self.recall)]
        return "\n".join(lines) + "\n"


def pr_curve(scores, gt, thresholds=1000) -> PRCurve:
    """Precision and recall of ``score >= threshold`` for descending thresholds.

    ``thresholds`` is an explicit sequence or a count; a count places the
    thresholds at evenly spaced quantiles of the scores so recall steps stay
    small wherever the scores are dense.  A threshold that selects nothing
    gets precision 1.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    g = np.asarray(gt, dtype=bool).ravel()
    if s.shape != g.shape:
        raise ValueError("scores and ground truth differ in size")
    n_pos = int(g.sum())
    if n_pos == 0:
        raise UndefinedMetric("no positive pixels")
    if np.isscalar(thresholds):
        qs = np.linspace(1.0, 0.0, int(thresholds))
        thr = np.unique(np.quantile(s, qs))[::-1]
    else:
        thr = np.sort(np.asarray(thresholds, dtype=np.float64))[::-1]
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    tp_cum = np.concatenate([[0], np.cumsum(g[order])])
    # number of pixels with score >= t
    counts = np.searchsorted(-s_sorted, -thr, side="right")
    tp = tp_cum[counts]
    with np.errstate(invalid="ignore", divide="ignore"):
        prec = np.where(counts > 0, tp / np.maximum(counts, 1), 1.0)
    return PRCurve(thr, prec.astype(np.float64), tp / n_pos)


@dataclass
class FrameEval:
    frame: int
    ap: Optional[float]
    psnr_full: float
    psnr_b: Optional[float]
    psnr_f: Optional[float]
    mse_full: float
    mse_b: Optional[float]
    mse_f: Optional[float]
    n_pixels: int
    n_fg: Optional[int]


def evaluate_frame(frame: int, pred_rgb, gt_rgb, score=None, gt_mask=None) -> FrameEval:
    mse = region_mse(pred_rgb, gt_rgb)
    n = int(np.asarray(gt_rgb).shape[0] * np.asarray(gt_rgb).shape[1])
    if gt_mask is None:
        return FrameEval(frame, None, psnr_from_mse(mse), None, None, mse, None, None, n, None)
    m = np.asarray(gt_mask, dtype=bool)
    n_fg = int(m.sum())
    mse_b = region_mse(pred_rgb, gt_rgb, ~m) if n_fg < n else None
    mse_f = region_mse(pred_rgb, gt_rgb, m) if n_fg else None
    ap = average_precision(score, m) if (score is not None and n_fg) else None
    return FrameEval(frame, ap, psnr_from_mse(mse),
                     None if mse_b is None else psnr_from_mse(mse_b),
                     None if mse_f is None else psnr_from_mse(mse_f),
                     mse, mse_b, mse_f, n, n_fg)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def _cap(x):
    if x is None:
        return None
    return min(float(x), PSNR_CAP)


@dataclass
class SceneReport:
    scene: str
    variant: str
    frames: List[FrameEval]
    skipped: List[int] = field(default_factory=list)   # frames without a positive pixel

    @property
    def mAP(self) -> Optional[float]:
        return _mean(f.ap for f in self.frames)

    def mean_psnr(self, which="full") -> Optional[float]:
        # report means of capped per-frame values so one exact frame cannot give inf
        return _mean(_cap(getattr(f, "psnr_" + which)) for f in self.frames)


@dataclass
class BenchReport:
    scenes: List[SceneReport]
    pr: Optional[PRCurve] = None

    @property
    def mAP(self) -> Optional[float]:
        return _mean(s.mAP for s in self.scenes)

    def mean_psnr(self, which="full") -> Optional[float]:
        return _mean(s.mean_psnr(which) for s in self.scenes)

    def to_dict(self):
        def fmt(x):
            return None if x is None else round(float(x), 6)

        out = {"mAP": fmt(self.mAP), "psnr": fmt(self.mean_psnr("full")),
               "psnr_b": fmt(self.mean_psnr("b")), "psnr_f": fmt(self.mean_psnr("f")), "scenes": []}
        for s in self.scenes:
            out["scenes"].append({
                "scene": s.scene, "variant": s.variant, "mAP": fmt(s.mAP),
                "psnr": fmt(s.mean_psnr("full")), "psnr_b": fmt(s.mean_psnr("b")),
                "psnr_f": fmt(s.mean_psnr("f")), "skipped_frames": list(s.skipped),
                "frames": [{k: (fmt(_cap(v)) if k.startswith("psnr") else fmt(v) if isinstance(v, float) else v)
                            for k, v in asdict(f).items()} for f in s.frames],
            })
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_text(self) -> str:
        def cell(x, scale=1.0):
            return "-" if x is None else f"{x * scale:.2f}"

        rows = [f"{'scene':<16} {'variant':<14} {'mAP':>7} {'PSNR':>7} {'PSNR_b':>7} {'PSNR_f':>7} "
                f"{'frames':>6} {'skipped':>7}"]
        for s in self.scenes:
            rows.append(f"{s.scene:<16} {s.variant:<14} {cell(s.mAP, 100):>7} {cell(s.mean_psnr('full')):>7} "
                        f"{cell(s.mean_psnr('b')):>7} {cell(s.mean_psnr('f')):>7} {len(s.frames):>6} "
                        f"{len(s.skipped):>7}")
        rows.append(f"{'mean':<16} {'':<14} {cell(self.mAP, 100):>7} {cell(self.mean_psnr('full')):>7} "
                    f"{cell(self.mean_psnr('b')):>7} {cell(self.mean_psnr('f')):>7}")
        per_frame = ["", "# per frame", f"{'scene':<16} {'frame':>5} {'AP':>7} {'PSNR':>7} {'PSNR_b':>7} {'PSNR_f':>7}"]
        for s in self.scenes:
            for f in s.frames:
                per_frame.append(f"{s.scene:<16} {f.frame:>5} {cell(f.ap, 100):>7} {cell(_cap(f.psnr_full)):>7} "
                                 f"{cell(_cap(f.psnr_b)):>7} {cell(_cap(f.psnr_f)):>7}")
        return "\n".join(rows + per_frame) + "\n"

    def write(self, directory) -> Dict[str, str]:
        os.makedirs(directory, exist_ok=True)
        paths = {"text": os.path.join(directory, REPORT_TEXT), "json": os.path.join(directory, REPORT_JSON)}
        with open(paths["text"], "w", encoding="utf-8") as fh:
            fh.write(self.to_text())
        with open(paths["json"], "w", encoding="utf-8") as fh:
            fh.write(self.to_json())
        if self.pr is not None:
            paths["pr"] = os.path.join(directory, PR_CURVE)
            with open(paths["pr"], "w", encoding="utf-8") as fh:
                fh.write(self.pr.to_text())
        return paths


def evaluate_scene(scene_name: str, variant: str, items: Sequence[dict]) -> (SceneReport, list):
    """Score already-rendered frames.

    Each item holds ``frame``, ``pred`` (H, W, 3), ``gt`` (H, W, 3) and
    optionally ``score`` (H, W) and ``mask`` (H, W bool).  Returns the scene
    report and the pooled ``(scores, gt)`` pixels for the PR curve.
    """
    frames, skipped, pooled = [], [], []
    for it in items:
        fe = evaluate_frame(it["frame"], it["pred"], it["gt"], it.get("score"), it.get("mask"))
        frames.append(fe)
        if it.get("mask") is not None and it.get("score") is not None:
            if fe.n_fg == 0:
                skipped.append(int(it["frame"]))
            pooled.append((np.asarray(it["score"]).ravel(), np.asarray(it["mask"], dtype=bool).ravel()))
    return SceneReport(scene_name, variant, frames, skipped), pooled


def aggregate(reports: Sequence[SceneReport], pooled=(), thresholds=1000) -> BenchReport:
    pr = None
    if pooled:
        s = np.concatenate([p[0] for p in pooled])
        g = np.concatenate([p[1] for p in pooled])
        if g.any():
            pr = pr_curve(s, g, thresholds)
    return BenchReport(list(reports), pr)


def evaluate(model, scene, frames=None, workers: int = 1) -> BenchReport:
    """Render every test frame, score it and aggregate.

    ``model`` is a :class:`~voldiff.model.SceneModel` or a checkpoint path.
    Frames without ground-truth masks still get PSNR; segmentation metrics
    are skipped for them.
    """
    from .model import load_model, segment_frame

    if isinstance(model, (str, os.PathLike)):
        model = load_model(model)[0]
    frames = scene.test_indices if frames is None else np.asarray(frames)
    items = []
    for t in frames:
        seg = segment_frame(model, scene, int(t), workers=workers)
        items.append({"frame": int(t), "pred": seg.color, "gt": scene.images[t], "score": seg.score,
                      "mask": scene.masks.get(int(t))})
    rep, pooled = evaluate_scene(scene.name, model.variant.value, items)
    return aggregate([rep], pooled)
