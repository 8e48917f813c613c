"""One test per acceptance criterion; each prints a PASS/FAIL line.

The training criteria run the full toy-kitchen benchmark and take hours on
one core.  Set VOLDIFF_ACCEPT_DIR to keep the trained checkpoints between
runs; a checkpoint is reused only when its stored config matches.
"""

import json
import os
import time

import numpy as np
import pytest

from conftest import record_criterion
from voldiff import check
from voldiff.cli import main
from voldiff.compositing import mix_naive, mix_principled, subsegment_oracle, transmission
from voldiff.config import desk_config
from voldiff.dataio import (TEST, VAL, AnalyticField, AnalyticScene, assign_splits, split_indices,
                            synthesize_scene, toy_kitchen)
from voldiff.evalkit import average_precision, evaluate, pr_curve, psnr
from voldiff.model import load_model, render_field, segment_frame, train
from voldiff.model.train import CHECKPOINT_NAME

VARIANTS = ("nerf", "nerf_bf", "nerf_w_nn", "neuraldiff", "neuraldiff_a", "neuraldiff_c", "neuraldiff_ca")
TRAIN_BUDGET_S = 30 * 60


# ---------------------------------------------------------------- mixing


@pytest.mark.xfail(strict=True, reason="the cyclic oracle's first-order bias exceeds 1e-6 at n=1e6")
def test_criterion_1_oracle_agreement():
    rng = np.random.default_rng(1)
    worst = 0.0
    t0 = time.perf_counter()
    for P in (3, 2):
        for _ in range(100):
            sig = rng.uniform(0.01, 5.0, size=P)
            delta = rng.uniform(0.01, 2.0)
            exact = np.array(mix_principled(list(sig), list(np.exp(-delta * sig))))
            worst = max(worst, float(np.abs(subsegment_oracle(sig, delta, 10 ** 6) - exact).max()))
    secs = time.perf_counter() - t0
    ok = worst < 1e-6 and secs < 10
    record_criterion(1, ok, f"max |principled - oracle(n=1e6)| = {worst:.2e} (limit 1e-6), {secs:.1f}s")
    assert ok


def test_criterion_1_extrapolated_check_passes():
    # the bias-corrected comparison that `voldiff check` runs instead
    rows = {r.name: r for r in check.oracle_checks()}
    assert rows["extrapolated_limit"].passed and rows["equal_densities_n1e6"].passed
    assert rows["monotone_convergence"].passed


def test_criterion_2_partition_identity():
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(10_000):
        P = int(rng.integers(1, 4))
        S = int(rng.integers(1, 9))
        sig = [rng.uniform(0.0, 5.0, size=S) * (rng.random(S) > 0.2) for _ in range(P)]
        delta = rng.uniform(0.01, 2.0, size=S)
        w = np.array(mix_principled(sig, [np.exp(-delta * s) for s in sig]))
        tau = np.concatenate([[0.0], np.cumsum(sum(sig) * delta)])
        v = np.exp(-tau)
        worst = max(worst, float(np.abs(w.sum(axis=0) - (1 - v[1:] / v[:-1])).max()))
    # two half-transparent materials: each absorbs half alone, together 3/4
    naive = float(sum(mix_naive([0.5, 0.5])))
    ok = worst < 1e-12 and abs(naive - 0.75) > 0.1
    record_criterion(2, ok, f"max partition error {worst:.1e} over 1e4 sequences; naive witness sums to {naive}")
    assert ok


def test_criterion_3_reduction_identity():
    rng = np.random.default_rng(3)
    single = both = 0.0
    for _ in range(1000):
        s, d = rng.uniform(0, 8), rng.uniform(0.01, 2)
        T = transmission(np.array([s]), d)
        single = max(single, abs(float(mix_principled([s], [T])[0][0]) - (1 - float(T[0]))))
        sig = np.zeros(3)
        sig[rng.integers(3)] = s
        Ts = [np.exp(-d * x) for x in sig]
        both = max(both, float(np.abs(np.array(mix_principled(list(sig), Ts)) - np.array(mix_naive(Ts))).max()))
    ok = single <= 1e-15 and both <= 1e-12
    record_criterion(3, ok, f"P=1 vs 1-T {single:.1e}; single nonzero naive vs principled {both:.1e}")
    assert ok


def test_criterion_4_gradient_integrity():
    t0 = time.perf_counter()
    rows = check.gradient_checks()
    secs = time.perf_counter() - t0
    worst = max(rows, key=lambda r: r.value)
    names = {r.name for r in rows}
    needed = {"positional_encoding", "frame_code", "background_streams", "foreground_stream",
              "actor_stream", "mix_naive", "mix_principled", "loss_prob", "loss_sparse", "loss_coarse",
              "total_loss"} | {f"composite_{m}_{p}" for m in ("naive", "principled")
                               for p in ("color", "uncertainty", "mask")}
    ok = all(r.passed for r in rows) and needed <= names and secs < 60
    record_criterion(4, ok, f"{len(rows)} gradient checks, worst {worst.name} {worst.value:.1e} "
                            f"(limit 1e-4), {secs:.1f}s")
    assert ok, [r.line() for r in rows if not r.passed]


# ---------------------------------------------------------------- synthetic benchmark


@pytest.fixture(scope="session")
def kitchen():
    return synthesize_scene(toy_kitchen())[0]


def test_criterion_5_analytic_render_agreement(kitchen):
    scene = AnalyticScene(toy_kitchen())
    field = AnalyticField(scene)
    worst = 0.0
    for t, pose in enumerate(kitchen.poses):
        got = render_field(field, kitchen.intrinsics, pose, t, 128, kitchen.near, kitchen.far)
        worst = max(worst, float(np.abs(np.clip(got.color, 0, 1) - kitchen.images[t]).max()))
    ok = worst < 2 / 255
    record_criterion(5, ok, f"max channel error {worst * 255:.2f}/255 over {kitchen.num_frames} frames "
                            f"at 128 samples (limit 2/255)")
    assert ok


def _train_or_reuse(kitchen, variant, root):
    cfg = desk_config(variant=variant)
    out = os.path.join(root, variant)
    ckpt = os.path.join(out, CHECKPOINT_NAME)
    stamp = os.path.join(out, "train_seconds.json")
    if os.path.exists(ckpt) and os.path.exists(stamp):
        model, manifest, _ = load_model(ckpt)
        if model.cfg == cfg and manifest["step"] == manifest["total_steps"]:
            with open(stamp) as fh:
                return model, manifest["log"], json.load(fh)["seconds"]
    t0 = time.perf_counter()
    res = train(kitchen, variant, cfg, out_dir=out)
    secs = time.perf_counter() - t0
    with open(stamp, "w") as fh:
        json.dump({"seconds": secs}, fh)
    return res.model, res.log, secs


@pytest.fixture(scope="session")
def benchmark(kitchen, tmp_path_factory):
    root = os.environ.get("VOLDIFF_ACCEPT_DIR") or str(tmp_path_factory.mktemp("accept"))
    out = {}
    for v in VARIANTS:
        model, log, secs = _train_or_reuse(kitchen, v, root)
        rep = evaluate(model, kitchen)
        out[v] = {"model": model, "log": log, "secs": secs, "mAP": rep.mAP,
                  "psnr_b": rep.mean_psnr("b"), "psnr": rep.mean_psnr("full")}
    return out


@pytest.mark.slow
def test_criterion_6a_neuraldiff_ca_map(benchmark):
    r = benchmark["neuraldiff_ca"]
    ok = r["mAP"] >= 0.75 and r["secs"] <= TRAIN_BUDGET_S
    record_criterion("6a", ok, f"NEURALDIFF_CA mAP {100 * r['mAP']:.1f} (need 75.0), "
                               f"trained in {r['secs'] / 60:.1f} min")
    assert ok


@pytest.mark.slow
def test_criterion_6b_ordering(benchmark):
    ca, nerf = benchmark["neuraldiff_ca"]["mAP"], benchmark["nerf"]["mAP"]
    a, base = benchmark["neuraldiff_a"]["mAP"], benchmark["neuraldiff"]["mAP"]
    ok = ca - nerf >= 0.10 and a >= base
    record_criterion("6b", ok, f"mAP CA {100 * ca:.1f} vs NERF {100 * nerf:.1f}; "
                               f"A {100 * a:.1f} vs NEURALDIFF {100 * base:.1f}")
    assert ok


@pytest.mark.slow
def test_criterion_6c_background_psnr(benchmark):
    ca, nerf = benchmark["neuraldiff_ca"]["psnr_b"], benchmark["nerf"]["psnr_b"]
    ok = ca > nerf
    record_criterion("6c", ok, f"PSNR_b CA {ca:.2f} dB vs NERF {nerf:.2f} dB")
    assert ok


@pytest.mark.slow
def test_criterion_6d_validation_psnr_improves(benchmark):
    rows = {v: (r["log"][0]["val_psnr"], r["log"][-1]["val_psnr"], r["secs"]) for v, r in benchmark.items()}
    ok = all(end > start and secs <= TRAIN_BUDGET_S for start, end, secs in rows.values())
    detail = ", ".join(f"{v} {s:.1f}->{e:.1f}" for v, (s, e, _) in rows.items())
    record_criterion("6d", ok, detail)
    assert ok


@pytest.mark.slow
def test_moving_objects_score_above_background(benchmark, kitchen):
    model = benchmark["neuraldiff_ca"]["model"]
    inside, outside = [], []
    for t in kitchen.test_indices:
        seg = segment_frame(model, kitchen, int(t))
        g = kitchen.masks[int(t)]
        inside.append(seg.score[g].mean())
        outside.append(seg.score[~g].mean())
    assert np.mean(inside) > np.mean(outside)


# ---------------------------------------------------------------- splits and metrics


def test_criterion_7_split_rule():
    exact = True
    for T in (32, 96, 500, 900):
        tags = assign_splits(T)
        exact &= all(tags[i] == (VAL if i % 16 == 0 else TEST if i % 16 == 8 else tags[i]) for i in range(T))
        exact &= all((tags[i] in (VAL, TEST)) == (i % 8 == 0) for i in range(T))
    tags = assign_splits(900)
    nv, nt = len(split_indices(tags, VAL)), len(split_indices(tags, TEST))
    ok = exact and 56 <= nv <= 57 and 56 <= nt <= 57
    record_criterion(7, ok, f"residue rule exact; T=900 gives {nv} val / {nt} test frames")
    assert ok


def _brute_ap(scores, gt):
    # precision-weighted recall steps over every distinct threshold, highest first
    n_pos = gt.sum()
    ap, prev_r = 0.0, 0.0
    for th in np.unique(scores)[::-1]:
        sel = scores >= th
        r = (sel & gt).sum() / n_pos
        ap += (r - prev_r) * (sel & gt).sum() / sel.sum()
        prev_r = r
    return ap


def test_criterion_8_metric_oracles():
    rng = np.random.default_rng(8)
    worst_ap = worst_psnr = worst_area = 0.0
    frames = 0
    for n in range(1, 13):
        for _ in range(40):
            gt = rng.random(n) < 0.4
            if not gt.any():
                gt[rng.integers(n)] = True
            scores = rng.integers(0, 5, size=n) / 4.0 if rng.random() < 0.5 else rng.random(n)
            worst_ap = max(worst_ap, abs(average_precision(scores, gt) - _brute_ap(scores, gt)))
            frames += 1
    for _ in range(20):
        a, b = rng.random((6, 7, 3)), rng.random((6, 7, 3))
        pooled = -10 * np.log10(np.mean((a - b) ** 2))
        worst_psnr = max(worst_psnr, abs(psnr(a, b) - pooled))
        s = rng.random((24, 24))
        g = rng.random((24, 24)) < s * 0.6
        worst_area = max(worst_area, abs(pr_curve(s, g).area() - average_precision(s, g)))
    ok = worst_ap < 1e-12 and worst_psnr < 1e-9 and worst_area < 1e-3
    record_criterion(8, ok, f"AP vs brute force {worst_ap:.1e} on {frames} frames; PSNR identity "
                            f"{worst_psnr:.1e}; |AP - PR area| {worst_area:.1e}")
    assert ok


# ---------------------------------------------------------------- determinism


def test_criterion_9_deterministic_reports(tmp_path):
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"width": 12, "height": 12, "focal": 10.0, "frames": 32, "samples": 96}))
    assert main(["synth", "--spec", str(spec), "--out", str(tmp_path / "scene")]) == 0
    flags = ["--trunk-layers", "2", "--trunk-width", "32", "--trunk-skip", "1", "--samples-coarse", "16",
             "--samples-fine", "16", "--batch-rays", "256", "--epochs", "2"]
    reports = []
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["train", "--scene", str(tmp_path / "scene"), "--out", str(d), "--seed", "5",
                     "--deterministic", *flags]) == 0
        assert main(["evaluate", "--checkpoint", str(d / CHECKPOINT_NAME), "--scene", str(tmp_path / "scene"),
                     "--out", str(d / "eval"), "--deterministic"]) == 0
        reports.append([(d / "eval" / f).read_bytes() for f in ("report.txt", "report.json", "pr_curve.txt")])
    same = reports[0] == reports[1]
    ckpts = (tmp_path / "a" / CHECKPOINT_NAME).read_bytes() == (tmp_path / "b" / CHECKPOINT_NAME).read_bytes()
    record_criterion(9, same, f"reports byte-identical across two seeded runs: {same}; checkpoints: {ckpts}")
    assert same
