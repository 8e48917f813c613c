import math

import numpy as np
import pytest

from voldiff.compositing import render_samples
from voldiff.config import desk_config
from voldiff.dataio import AnalyticField, AnalyticScene, march_frame, synthesize_scene, toy_kitchen
from voldiff.geometry import CameraIntrinsics, Pose, ray_samples, sample_depths
from voldiff.model import (FrameError, ModelVariant, NonFiniteLoss, RayBundle, SceneModel, load_model,
                           loss_coarse, loss_prob, loss_sparse, render_field, render_frame,
                           render_pixel, segment_frame, total_loss, train)
from voldiff.nn import backward
from voldiff.nn.tensor import Tensor

TINY = dict(trunk_layers=2, trunk_width=16, trunk_skip=1, head_width=8, fg_layers=1, fg_width=16,
            actor_layers=1, actor_width=16, coarse_layers=1, coarse_width=8, samples_coarse=8,
            samples_fine=8, batch_rays=64, appearance_width=4, freq_xyz=4, freq_code=2, freq_dir=2,
            precision="float64", val_rays=128, chunk_rays=256)


def tiny_cfg(**kw):
    return desk_config(**{**TINY, **kw})


@pytest.fixture(scope="module")
def mini_scene():
    spec = toy_kitchen(width=8, height=8, focal=7.0, frames=32, samples=96)
    return synthesize_scene(spec)[0]


def small_model(variant, **kw):
    return SceneModel(variant, tiny_cfg(**kw), 32, [t for t in range(32) if t % 8], 0.1, 6.0)


def batch_for(pose, n=5, samples=6, far=6.0):
    intr = CameraIntrinsics(7.0, 7.0, 4.0, 4.0, 8, 8)
    rays = RayBundle.from_frame(intr, pose, 0, pixels=np.arange(n))
    depths = sample_depths(0.1, far, samples, n_rays=n)
    return ray_samples(rays.rotations, rays.translations, rays.cam_dirs, depths, far)


def pose_at(tx, yaw=0.0):
    c, s = math.cos(yaw), math.sin(yaw)
    return Pose(np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]]), np.array([tx, 0.2, -1.0]))


def kill_density(model, prefixes):
    # zero weights and a deep negative bias: softplus underflows to exactly 0
    for name in model.store.names():
        if any(name.startswith(p + ".out.") for p in prefixes):
            d = model.store[name].data
            if name.endswith(".b"):
                d[0] = -1e3
            else:
                d[..., 0] = 0.0


# ---------------------------------------------------------------- fields

def test_variant_table():
    v = ModelVariant
    assert v.NERF.streams == ("b",) and v.NERF.time_mode == "none"
    assert v.NERF_BF.time_mode == "positional-time"
    assert v.NERF_W_NN.time_mode == "per-frame-free-code"
    assert v.NEURALDIFF_A.streams == ("b", "f", "a") and v.NEURALDIFF_A.mixing == "naive"
    assert v.NEURALDIFF_CA.mixing == "principled"
    assert v.parse("NeuralDiff+C+A") is v.NEURALDIFF_CA
    with pytest.raises(ValueError):
        v.parse("nerf_x")


def test_nerf_populates_background_only():
    m = small_model("nerf")
    out = m.fine(batch_for(pose_at(0.0)), np.zeros(5, dtype=int))
    assert out.materials == ["b"]
    r = render_frame(m, CameraIntrinsics(5.0, 5.0, 3.0, 2.0, 6, 4), pose_at(0.0), 3)
    assert np.all(r.mask[..., 1:] == 0) and r.mask[..., 0].max() > 0


def test_stream_gating_equals_zero_density():
    m = small_model("neuraldiff_ca")
    b = batch_for(pose_at(0.1))
    full = m.fine(b, np.full(5, 3))
    gated = m.fine(b, np.full(5, 3))
    for p in ("f", "a"):
        for d in (gated.sigma, gated.beta):
            d[p] = Tensor(np.zeros_like(d[p].data))
    only_b = m.fine(b, np.full(5, 3))
    for p in ("f", "a"):
        del only_b.sigma[p], only_b.color[p], only_b.beta[p]
    for mode in ("principled", "naive"):
        x, y = render_samples(gated, b.deltas, mode), render_samples(only_b, b.deltas, mode)
        assert np.array_equal(x.color.data, y.color.data)
        assert np.array_equal(x.beta.data, y.beta.data)
        assert np.array_equal(x.mask.data[:, 0], y.mask.data[:, 0])
        assert not np.array_equal(render_samples(full, b.deltas, mode).color.data, x.color.data)


def test_actor_stream_ignores_world_pose():
    m = small_model("neuraldiff_ca")
    b1, b2 = batch_for(pose_at(0.0)), batch_for(pose_at(0.7, yaw=0.4))
    assert np.array_equal(b1.points_camera, b2.points_camera)
    frames = np.full(5, 11)
    o1, o2 = m.fine(b1, frames), m.fine(b2, frames)
    assert np.array_equal(o1.sigma["a"].data, o2.sigma["a"].data)
    assert np.array_equal(o1.color["a"].data, o2.color["a"].data)
    assert not np.allclose(o1.sigma["b"].data, o2.sigma["b"].data)


def test_equal_pose_equal_code_identical():
    # frame 8 is held out; it borrows the code of frame 7 (nearest, ties to the earlier)
    m = small_model("nerf_w_nn")
    b = batch_for(pose_at(0.3))
    o7, o8 = m.fine(b, np.full(5, 7)), m.fine(b, np.full(5, 8))
    for p in ("b", "f"):
        assert np.array_equal(o7.sigma[p].data, o8.sigma[p].data)
        assert np.array_equal(o7.color[p].data, o8.color[p].data)
    o9 = m.fine(b, np.full(5, 9))
    assert not np.array_equal(o7.color["f"].data, o9.color["f"].data)


def test_free_code_strict_at_train_time():
    m = small_model("nerf_w_nn")
    with pytest.raises(FrameError, match="frame 8"):
        m.fine(batch_for(pose_at(0.0)), np.full(5, 8), training=True)
    with pytest.raises(FrameError):
        m.fine(batch_for(pose_at(0.0)), np.full(5, 40))


def test_outputs_in_range():
    m = small_model("neuraldiff_ca")
    out = m.fine(batch_for(pose_at(0.0)), np.full(5, 2))
    for p in ("b", "f", "a"):
        assert np.all(out.sigma[p].data >= 0)
        c = out.color[p].data
        assert np.all((c >= 0) & (c <= 1))
    for p in ("f", "a"):
        assert np.all(out.beta[p].data >= 0)


# ---------------------------------------------------------------- rendering

def test_empty_scene_renders_black():
    m = small_model("neuraldiff_ca")
    kill_density(m, ("sigma_b", "coarse.sigma", "fg", "actor"))
    intr = CameraIntrinsics(7.0, 7.0, 4.0, 4.0, 8, 8)
    coarse, fine = render_pixel(m, intr, pose_at(0.0), (3, 4), 5)
    assert np.all(coarse.color.data == 0) and np.all(fine.color.data == 0)


def test_render_pixel_deterministic():
    m = small_model("neuraldiff_ca")
    intr = CameraIntrinsics(7.0, 7.0, 4.0, 4.0, 8, 8)
    a = render_pixel(m, intr, pose_at(0.2), (1, 6), 5)[1]
    b = render_pixel(m, intr, pose_at(0.2), (1, 6), 5)[1]
    assert np.array_equal(a.color.data, b.color.data) and np.array_equal(a.mask.data, b.mask.data)
    with pytest.raises(Exception):
        render_pixel(m, intr, pose_at(0.2), (8, 0), 5)


def test_analytic_box_matches_reference():
    spec = toy_kitchen(width=12, height=12, focal=10.0, frames=32, actor=False, samples=512)
    spec.objects = spec.objects[:1]
    scene = AnalyticScene(spec)
    pose = scene.poses()[5]
    ref, _ = march_frame(scene, pose, 5)
    got = render_field(AnalyticField(scene), scene.intrinsics(), pose, 5, 128, spec.near, spec.far)
    assert np.max(np.abs(got.color - ref)) < 2 / 255


# ---------------------------------------------------------------- losses

def test_loss_prob_examples():
    assert float(loss_prob([[0.2, 0.3, 0.4]], [[0.2, 0.3, 0.4]], [1.0]).data) == 0.0
    assert float(loss_prob([[1.0, 0.0, 0.0]], [[0.0, 0.0, 0.0]], [1.0]).data) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        loss_prob([[0.0, 0, 0]], [[0.0, 0, 0]], [0.0])


def test_loss_prob_minimizer():
    r2 = 0.37
    grid = np.linspace(0.05, 2.0, 200001)
    vals = r2 / (2 * grid ** 2) + np.log(grid ** 2)
    b_best = grid[np.argmin(vals)]
    assert b_best ** 2 == pytest.approx(r2 / 2, rel=1e-4)
    got = float(loss_prob([[math.sqrt(r2), 0, 0]], [[0.0, 0, 0]], [math.sqrt(r2 / 2)]).data)
    assert got == pytest.approx(1 + math.log(r2 / 2), abs=1e-12)
    assert got == pytest.approx(vals.min(), abs=1e-8)


def test_loss_sparse_examples():
    assert float(loss_sparse([np.zeros((2, 3)), np.zeros((2, 3))]).data) == 0.0
    assert float(loss_sparse([np.array([[2.0]])]).data) == 2.0
    s = Tensor(np.array([[0.5, 1.5, 0.0]]), requires_grad=True)
    backward(loss_sparse([s]))
    assert np.array_equal(s.grad, np.ones((1, 3)))
    with pytest.raises(ValueError):
        loss_sparse([np.array([[-1.0]])])


def test_loss_coarse_examples():
    assert float(loss_coarse([[0.5, 0.5, 0.5]], [[0.5, 0.5, 0.5]]).data) == 0.0
    assert float(loss_coarse([[0.1, 0, 0]], [[0.0, 0, 0]]).data) == pytest.approx(0.01, abs=1e-15)
    a = np.random.default_rng(0).random((4, 3))
    b = np.random.default_rng(1).random((4, 3))
    whole = float(loss_coarse(a, b).data)
    assert whole == pytest.approx(sum(float(loss_coarse(a[i:i + 1], b[i:i + 1]).data) for i in range(4)))


def _fake_outputs(rng, n=4):
    class Out:
        pass
    fine, coarse = Out(), Out()
    fine.color = rng.random((n, 3))
    fine.beta = rng.random(n) + 0.1
    fine.sigma = [rng.random((n, 5)), rng.random((n, 5))]
    coarse.color = rng.random((n, 3))
    return coarse, fine


def test_total_loss_composition():
    rng = np.random.default_rng(3)
    target = rng.random((4, 3))
    coarse, fine = _fake_outputs(rng)
    t0, parts = total_loss(target, coarse, fine, 0.0)
    assert float(t0.data) == pytest.approx(parts["prob"] + parts["coarse"], rel=1e-13)
    t1, _ = total_loss(target, coarse, fine, 0.01)
    fine.sigma = [2 * s for s in fine.sigma]
    t2, parts2 = total_loss(target, coarse, fine, 0.01)
    assert float(t2.data) - float(t1.data) == pytest.approx(0.01 * parts2["sparse"] / 2, rel=1e-10)
    with pytest.raises(ValueError):
        total_loss(np.zeros((0, 3)), coarse, fine)


# ---------------------------------------------------------------- training

def test_zero_epochs_is_initialisation(mini_scene, tmp_path):
    cfg = tiny_cfg(epochs=0, variant="neuraldiff_ca")
    res = train(mini_scene, "neuraldiff_ca", cfg, out_dir=tmp_path)
    assert res.step == 0 and len(res.log) == 1
    loaded, manifest, _ = load_model(res.checkpoint)
    fresh = SceneModel("neuraldiff_ca", cfg, 32, mini_scene.train_indices, mini_scene.near, mini_scene.far)
    a, b = loaded.store.state(), fresh.store.state()
    assert a.keys() == b.keys()
    assert all(np.array_equal(a[k], b[k]) for k in a)


def test_resume_replays_uninterrupted_run(mini_scene, tmp_path):
    cfg = tiny_cfg(epochs=2)
    full = train(mini_scene, "neuraldiff_a", cfg)
    part = train(mini_scene, "neuraldiff_a", cfg.updated(max_steps=9), out_dir=tmp_path / "a")
    assert part.step == 9
    rest = train(mini_scene, "neuraldiff_a", cfg, resume=part.checkpoint)
    assert rest.step == full.step
    a, b = full.model.store.state(), rest.model.store.state()
    assert all(np.array_equal(a[k], b[k]) for k in a)
    # the interrupted run also logged its stopping point
    whole = [e for e in rest.log if float(e["epoch"]).is_integer()]
    assert [e["val_psnr"] for e in whole] == [e["val_psnr"] for e in full.log]


def test_resume_rejects_other_variant(mini_scene, tmp_path):
    res = train(mini_scene, "nerf", tiny_cfg(epochs=0), out_dir=tmp_path)
    with pytest.raises(ValueError, match="variant"):
        train(mini_scene, "neuraldiff", tiny_cfg(epochs=1), resume=res.checkpoint)


def test_same_seed_same_log(mini_scene):
    cfg = tiny_cfg(epochs=1, deterministic=True)
    a = train(mini_scene, "neuraldiff_ca", cfg).log
    b = train(mini_scene, "neuraldiff_ca", cfg).log
    assert a == b


def test_non_finite_loss_aborts(mini_scene):
    import copy
    bad = copy.copy(mini_scene)
    bad.images = mini_scene.images.copy()
    bad.images[1, 2, 3] = np.nan
    with pytest.raises(NonFiniteLoss) as info:
        train(bad, "nerf", tiny_cfg(epochs=1))
    assert info.value.epoch == 1 and "batch" in str(info.value)


@pytest.mark.slow
def test_validation_psnr_improves(mini_scene):
    cfg = tiny_cfg(epochs=72, batch_rays=64, lr0=5e-3)
    res = train(mini_scene, "neuraldiff_ca", cfg)
    assert res.step >= 2000
    assert res.log[-1]["val_psnr"] > res.log[0]["val_psnr"] + 3.0


@pytest.mark.slow
def test_large_lambda_empties_dynamic_streams():
    spec = toy_kitchen(width=8, height=8, focal=7.0, frames=32, samples=96, actor=False)
    spec.objects = []
    scene = synthesize_scene(spec)[0]
    res = train(scene, "neuraldiff", tiny_cfg(epochs=12, lambda_sparse=100.0, lr0=2e-2))
    m = res.model
    sig = []
    for t in scene.test_indices:
        b = batch_for(scene.poses[t], n=64, samples=16)
        sig.append(m.fine(b, np.full(64, t)).sigma["f"].data.ravel())
    assert np.median(np.concatenate(sig)) < 1e-3


# ---------------------------------------------------------------- segmentation

def test_segment_empty_dynamics_scores_zero(mini_scene):
    m = SceneModel("neuraldiff_ca", tiny_cfg(), 32, mini_scene.train_indices, 0.1, 6.0)
    kill_density(m, ("fg", "actor"))
    seg = segment_frame(m, mini_scene, 8)
    assert seg.score.shape == (8, 8) and np.all(seg.score == 0)
    assert np.all(seg.mask[..., 1:] == 0)


def test_nerf_exact_reconstruction_scores_zero(mini_scene):
    m = SceneModel("nerf", tiny_cfg(), 32, mini_scene.train_indices, 0.1, 6.0)
    rendered = segment_frame(m, mini_scene, 8).color
    seg = segment_frame(m, mini_scene, 8, image=rendered)
    assert np.all(seg.score == 0)
    assert segment_frame(m, mini_scene, 8).score.max() > 0


def test_segment_missing_pose(mini_scene):
    m = SceneModel("nerf", tiny_cfg(), 32, mini_scene.train_indices, 0.1, 6.0)
    with pytest.raises(KeyError):
        segment_frame(m, mini_scene, 32)
