"""Command-line entry point: ``voldiff synth|train|render|segment|evaluate|check``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every training key of :class:`~voldiff.config.RunConfig` is also a flag
(``--batch_rays`` or ``--batch-rays``); a ``--config`` file overrides the
``--preset`` defaults and flags override the file.  The effective configuration is
written next to the outputs as ``config.txt``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields

from .config import ConfigError, RunConfig, VARIANT_TAGS, desk_config, load_config, save_config

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _log(msg):
    print(msg, file=sys.stderr, flush=True)


# ---------------------------------------------------------------- config flags

_SKIP_FLAGS = {"variant", "seed", "deterministic"}


def _add_config_flags(p):
    p.add_argument("--preset", choices=("full", "desk"), default="full",
                   help="starting config: full-size networks or the small single-core preset")
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--variant", choices=VARIANT_TAGS)
    for f in fields(RunConfig):
        if f.name in _SKIP_FLAGS:
            continue
        key = "lambda" if f.name == "lambda_sparse" else f.name
        names = [f"--{key}"]
        if "_" in key:
            names.append(f"--{key.replace('_', '-')}")
        p.add_argument(*names, dest=f"cfg_{f.name}", default=None, metavar="V")


def _add_common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--deterministic", action="store_true", help="fixed reduction order, one worker")


def _effective_config(args, base=None) -> RunConfig:
    cfg = base or (desk_config() if getattr(args, "preset", "full") == "desk" else RunConfig())
    if getattr(args, "config", None):
        cfg = load_config(args.config, cfg)
    changes = {}
    for f in fields(RunConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            changes["lambda" if f.name == "lambda_sparse" else f.name] = v
    if getattr(args, "variant", None):
        changes["variant"] = args.variant
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "deterministic", False):
        changes["deterministic"] = True
    cfg = RunConfig.from_dict(changes, cfg)
    if cfg.deterministic:
        cfg = cfg.updated(workers=1)
    return cfg


# ---------------------------------------------------------------- commands


def cmd_synth(args):
    from .dataio import SpecError, SyntheticSceneSpec, save_scene, synthesize_scene, toy_kitchen

    if args.spec:
        with open(args.spec, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{args.spec}: malformed spec ({exc})") from None
        if not isinstance(d, dict):
            raise SpecError("spec", "expected a JSON object")
        base = {}
        if "objects" not in d:
            # default object layout, scaled to the requested clip length
            frames = d.get("frames", SyntheticSceneSpec.frames)
            if not isinstance(frames, int):
                raise SpecError("frames", "must be an integer")
            base = toy_kitchen(frames=frames).to_dict()
        base.update(d)
        spec = SyntheticSceneSpec.from_dict(base)
    else:
        spec = toy_kitchen()
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    _log(f"synthesizing {spec.name}: {spec.frames} frames at {spec.width}x{spec.height}")
    ds, _ = synthesize_scene(spec)
    save_scene(ds, args.out)
    with open(os.path.join(args.out, "spec.json"), "w", encoding="utf-8") as fh:
        json.dump(spec.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    _log(f"wrote {args.out}")
    return EXIT_OK


def cmd_train(args):
    from .dataio import load_scene
    from .model import train

    scene = load_scene(args.scene)
    cfg = _effective_config(args)
    os.makedirs(args.out, exist_ok=True)
    save_config(cfg, os.path.join(args.out, "config.txt"))

    def progress(e):
        psnr = e["val_psnr"]
        loss = "-" if e["loss"] is None else f"{e['loss']:.5f}"
        _log(f"epoch {e['epoch']:g} step {e['step']} loss {loss} val_psnr "
             f"{'-' if psnr is None else f'{psnr:.3f}'}")

    res = train(scene, cfg.variant, cfg, out_dir=args.out, resume=args.resume, progress=progress)
    _log(f"saved {res.checkpoint} at step {res.step}/{res.total_steps}")
    return EXIT_OK


def _frame_list(scene, spec):
    if spec in (None, "test"):
        return [int(i) for i in scene.test_indices]
    if spec in ("val", "train"):
        return [int(i) for i in scene.indices(spec)]
    if spec == "all":
        return list(range(scene.num_frames))
    try:
        out = [int(s) for s in spec.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--frames: expected test/val/train/all or a comma list, got {spec!r}") from None
    for i in out:
        if not 0 <= i < scene.num_frames:
            raise UsageError(f"--frames: frame {i} outside [0, {scene.num_frames})")
    return out


def _load_pose_override(path):
    from .geometry import GeometryError, Pose

    with open(path, encoding="utf-8") as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: malformed pose override ({exc})") from None
    entries = d.get("frames", d if isinstance(d, list) else None)
    if not isinstance(entries, list):
        raise ValueError(f"{path}: expected a 'frames' list")
    out = {}
    for j, e in enumerate(entries):
        try:
            t = int(e["frame"])
            pose = Pose.from_matrix(e["world_from_camera"])
        except (KeyError, TypeError, ValueError, GeometryError) as exc:
            raise ValueError(f"{path}: entry {j}: {exc}") from None
        if t in out:
            raise ValueError(f"{path}: frame {t} listed twice")
        out[t] = pose
    return out


def _render_like(args, with_renders=True):
    from .dataio import load_scene, save_outputs
    from .model import load_model, segment_frame

    scene = load_scene(args.scene)
    model, manifest, _ = load_model(args.checkpoint)
    workers = 1 if args.deterministic else args.workers
    if args.pose_override:
        overrides = _load_pose_override(args.pose_override)
        for t in overrides:
            if not 0 <= t < scene.num_frames:
                raise ValueError(f"pose override frame {t} outside [0, {scene.num_frames})")
        jobs = sorted(overrides.items())
    else:
        jobs = [(t, None) for t in _frame_list(scene, args.frames)]
    renders, masks, scores = {}, {}, {}
    for t, pose in jobs:
        seg = segment_frame(model, scene, t, pose=pose, workers=workers)
        if with_renders:
            renders[t] = seg.color
        masks[t] = seg.mask
        scores[t] = seg.score
    meta = {"variant": model.variant.value, "checkpoint_step": manifest["step"],
            "score": "mask_f+a" if model.variant.uses_mask_score else "reconstruction_error",
            "pose_override": bool(args.pose_override)}
    save_outputs(args.out, renders, masks, scores, meta=meta)
    save_config(model.cfg, os.path.join(args.out, "config.txt"))
    _log(f"wrote {len(jobs)} frame(s) to {args.out}")
    return EXIT_OK


def cmd_render(args):
    return _render_like(args, with_renders=True)


def cmd_segment(args):
    return _render_like(args, with_renders=True)


def cmd_evaluate(args):
    from .dataio import load_scene
    from .evalkit import evaluate
    from .model import load_model

    scene = load_scene(args.scene)
    model, _, _ = load_model(args.checkpoint)
    frames = scene.test_indices
    if not scene.has_masks(frames):
        _log("scene has no masks for the test frames: segmentation metrics skipped")
    workers = 1 if args.deterministic else args.workers
    report = evaluate(model, scene, frames, workers=workers)
    paths = report.write(args.out)
    save_config(model.cfg, os.path.join(args.out, "config.txt"))
    sys.stdout.write(report.to_text())
    _log(f"wrote {paths['text']}")
    return EXIT_OK


def cmd_check(args):
    from .check import summarize, timed_run

    results, secs = timed_run(args.suite or None, fault=args.inject_fault)
    for r in results:
        print(r.line())
    ok = summarize(results)
    print(f"{'all required checks passed' if ok else 'CHECK FAILED'} ({len(results)} checks, {secs:.1f}s)")
    return EXIT_OK if ok else EXIT_NUMERIC


# ---------------------------------------------------------------- parser


def build_parser():
    p = _Parser(prog="voldiff", description="three-stream radiance-field scene factorisation")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic scene with ground truth")
    s.add_argument("--spec", help="JSON scene spec (default: toy-kitchen)")
    s.add_argument("--out", required=True)
    _add_common(s)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="fit a model variant to a scene")
    t.add_argument("--scene", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    _add_config_flags(t)
    _add_common(t)
    t.set_defaults(func=cmd_train)

    for name, fn, text in (("render", cmd_render, "render frames, masks and scores"),
                           ("segment", cmd_segment, "foreground score maps and masks")):
        r = sub.add_parser(name, help=text)
        r.add_argument("--checkpoint", required=True)
        r.add_argument("--scene", required=True)
        r.add_argument("--out", required=True)
        r.add_argument("--frames", default="test", help="test|val|train|all or a comma list")
        r.add_argument("--pose-override", dest="pose_override",
                       help="JSON list of {frame, world_from_camera} to render novel poses")
        r.add_argument("--workers", type=int, default=1)
        _add_common(r)
        r.set_defaults(func=fn)

    e = sub.add_parser("evaluate", help="mAP and PSNR on the test split")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--workers", type=int, default=1)
    _add_common(e)
    e.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("check", help="oracle, partition and gradient self-checks")
    c.add_argument("--suite", action="append", choices=("oracle", "partition", "gradients"))
    c.add_argument("--inject-fault", dest="inject_fault", default=None, help=argparse.SUPPRESS)
    _add_common(c)
    c.set_defaults(func=cmd_check)
    return p


def main(argv=None) -> int:
    from .dataio import SceneError, SpecError
    from .geometry import GeometryError
    from .model import NonFiniteLoss
    from .nn import NonFiniteGradient
    from .nn.checkpoint import CheckpointError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "command", None):
            parser.print_help(sys.stderr)
            return EXIT_USAGE
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return args.func(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return EXIT_USAGE
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return EXIT_USAGE
    except SpecError as exc:
        _log(f"invalid spec: {exc}")
        return EXIT_DATA
    except (NonFiniteLoss, NonFiniteGradient, FloatingPointError) as exc:
        _log(f"numerical failure: {exc}")
        return EXIT_NUMERIC
    except (SceneError, CheckpointError, GeometryError, OSError, KeyError, ValueError) as exc:
        _log(f"data error: {exc}")
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
