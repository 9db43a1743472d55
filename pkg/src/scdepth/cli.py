"""Command-line entry point.

Exit codes: 0 success, 1 failed gradient check, 2 input error,
3 degenerate geometry, 4 insufficient data.
"""

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import fileio, synth
from .errors import ScdepthError
from .evalkit import (Trajectory, align_global_scale, align_per_frame_scale,
                      eigen_depth_metrics, kitti_odom_errors, mean_depth_metrics)
from .geometry import PoseSE3, compose, exp_so3, rotation_angle
from .gradients import fd_gradient, loss_gradients, max_relative_error, random_instance
from .losses import LossWeights, total_loss
from .refine import RefineConfig, refine_pair, refine_sequence

log = logging.getLogger("scdepth")

PRESETS = {
    "static": lambda seed, size: synth.static_scene(seed, size),
    "fronto": lambda seed, size: synth.fronto_parallel_scene(seed, size),
    "occlusion": lambda seed, size: synth.occlusion_scene(seed, size),
    "moving-box": lambda seed, size: synth.moving_box_scene(seed, size),
    "integer-shift": lambda seed, size: synth.integer_shift_scene(size),
    "sequence": lambda seed, size: synth.fronto_parallel_scene(
        seed, size, frames=3, step=PoseSE3(exp_so3([0.005, -0.01, 0.0]), [0.25, -0.05, 0.0])),
}


def _dump(obj):
    print(json.dumps(obj, indent=2, sort_keys=True))


def _weights(args):
    return LossWeights(alpha=args.alpha, beta=args.beta, gamma=args.gamma,
                       lambda_i=args.lambda_i, lambda_s=args.lambda_s)


def _add_weight_flags(p):
    d = LossWeights()
    p.add_argument("--alpha", type=float, default=d.alpha, help="masked photometric weight")
    p.add_argument("--beta", type=float, default=d.beta, help="smoothness weight")
    p.add_argument("--gamma", type=float, default=d.gamma, help="geometry-consistency weight")
    p.add_argument("--lambda-i", type=float, default=d.lambda_i, help="L1 share of photometric error")
    p.add_argument("--lambda-s", type=float, default=d.lambda_s, help="SSIM share of photometric error")


def _add_frame_flags(p, frames_flag):
    p.add_argument("--scene-dir", help="directory written by 'scdepth synth'")
    p.add_argument(frames_flag, type=int, nargs="+", default=[0, 1],
                   help="frame indices (consecutive pairs are used)")
    p.add_argument("--images", nargs="+", help="image files, one per frame")
    p.add_argument("--depths", nargs="+", help="PFM depth files, one per frame")
    p.add_argument("--poses", help="KITTI camera-to-world pose file indexed by frame")
    p.add_argument("--intrinsics", help="intrinsics JSON")


def _image_path(scene_dir, k):
    for ext in (".ppm", ".pgm"):
        p = os.path.join(scene_dir, f"frame_{k:03d}{ext}")
        if os.path.exists(p):
            return p
    raise ScdepthError(f"no image for frame {k} in {scene_dir}")


def _load_frames(args, frames):
    sd = args.scene_dir
    if args.images:
        images = [fileio.read_pnm(p) for p in args.images]
    elif sd:
        images = [fileio.read_pnm(_image_path(sd, k)) for k in frames]
    else:
        raise ScdepthError("need --images or --scene-dir")
    if args.depths:
        depths = [fileio.read_pfm(p) for p in args.depths]
    elif sd:
        depths = [fileio.read_pfm(os.path.join(sd, f"depth_{k:03d}.pfm")) for k in frames]
    else:
        raise ScdepthError("need --depths or --scene-dir")
    pose_file = args.poses or (sd and os.path.join(sd, "poses.txt"))
    intr_file = args.intrinsics or (sd and os.path.join(sd, "intrinsics.json"))
    if not pose_file or not intr_file:
        raise ScdepthError("need --poses and --intrinsics (or --scene-dir)")
    all_poses = fileio.read_kitti_poses(pose_file)
    K = fileio.read_intrinsics(intr_file)
    if len(images) != len(frames) or len(depths) != len(frames):
        raise ScdepthError("number of images/depths does not match the frame list")
    try:
        cam = [all_poses[k] for k in frames]
    except IndexError:
        raise ScdepthError(f"pose file has {len(all_poses)} poses, frames {frames} requested") from None
    # P_ab = T_b^-1 T_a for camera-to-world T
    rel = [compose(cam[i], cam[i + 1].inverse()) for i in range(len(frames) - 1)]
    return images, depths, rel, K


# ---------------------------------------------------------------------------
# subcommands


def cmd_scene(args):
    spec = PRESETS[args.preset](args.seed, (args.size, args.size))
    print(spec.to_json())
    return 0


def cmd_synth(args):
    try:
        with open(args.spec) as f:
            text = f.read()
    except OSError as exc:
        raise ScdepthError(f"cannot read spec: {exc}") from exc
    spec = synth.SceneSpec.from_json(text)
    frames = synth.render(spec)
    out = args.out_dir
    os.makedirs(out, exist_ok=True)
    ext = ".ppm" if spec.channels == 3 else ".pgm"
    for k, fr in enumerate(frames):
        fileio.write_pnm(os.path.join(out, f"frame_{k:03d}{ext}"), fr.image)
        fileio.write_pfm(os.path.join(out, f"depth_{k:03d}.pfm"), fr.depth)
        fileio.write_pnm(os.path.join(out, f"occlusion_{k:03d}.pgm"), fr.occlusion_mask.astype(float))
        fileio.write_pnm(os.path.join(out, f"dynamic_{k:03d}.pgm"), fr.dynamic_mask.astype(float))
    fileio.write_kitti_poses(os.path.join(out, "poses.txt"), [fr.gt_pose.inverse() for fr in frames])
    fileio.write_intrinsics(os.path.join(out, "intrinsics.json"), spec.intrinsics)
    with open(os.path.join(out, "scene.json"), "w") as f:
        f.write(spec.to_json() + "\n")
    log.info("wrote %d frames to %s", len(frames), out)
    return 0


def cmd_loss(args):
    frames = args.pair
    if len(frames) != 2:
        raise ScdepthError("--pair takes exactly two frame indices")
    images, depths, rel, K = _load_frames(args, frames)
    rep = total_loss(images[0], images[1], depths[0], depths[1], rel[0], K, _weights(args),
                     bidirectional=args.bidirectional)
    if args.dump_dir:
        os.makedirs(args.dump_dir, exist_ok=True)
        fileio.write_pfm(os.path.join(args.dump_dir, "d_diff.pfm"),
                         np.where(rep.d_diff.valid, rep.d_diff.values, -1.0))
        fileio.write_pfm(os.path.join(args.dump_dir, "mask.pfm"),
                         np.where(rep.mask.valid, rep.mask.values, -1.0))
    out = rep.to_dict()
    out["weights"] = rep.weights.to_dict()
    _dump(out)
    return 0


def cmd_gradcheck(args):
    if not args.tolerance > 0:
        raise ScdepthError("tolerance must be positive")
    if args.count < 1 or not 3 <= args.min_size <= args.max_size:
        raise ScdepthError("need --count >= 1 and 3 <= --min-size <= --max-size")
    rng = np.random.default_rng(args.seed)
    errors = []
    for _ in range(args.count):
        size = tuple(int(x) for x in rng.integers(args.min_size, args.max_size + 1, 2))
        inst = random_instance(rng, size)
        errors.append(max_relative_error(loss_gradients(*inst), fd_gradient(*inst)))
    worst = max(errors)
    ok = worst <= args.tolerance
    _dump({"instances": len(errors), "max_rel_err": worst, "tolerance": args.tolerance,
           "seed": args.seed, "pass": ok})
    return 0 if ok else 1


def _perturb(P, deg, frac, rng):
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    dt = rng.standard_normal(3)
    dt *= frac * np.linalg.norm(P.translation) / np.linalg.norm(dt)
    return PoseSE3(exp_so3(np.radians(deg) * axis) @ P.rotation, P.translation + dt)


def cmd_refine(args):
    frames = args.frames
    if len(frames) < 2:
        raise ScdepthError("--frames needs at least two indices")
    images, depths, gt_rel, K = _load_frames(args, frames)
    rng = np.random.default_rng(args.seed)
    scales = args.depth_scales or [1.0] * len(frames)
    if len(scales) != len(frames):
        raise ScdepthError("--depth-scales needs one value per frame")
    depths = [d * s for d, s in zip(depths, scales)]
    tscale = args.translation_scales or [1.0] * len(gt_rel)
    init = [PoseSE3._unchecked(P.rotation, P.translation * s) for P, s in zip(gt_rel, tscale)]
    init = [_perturb(P, args.perturb_rot_deg, args.perturb_trans, rng)
            if (args.perturb_rot_deg or args.perturb_trans) else P for P in init]
    cfg = RefineConfig(max_iters=args.max_iters, step_twist=args.step_twist,
                       step_logdepth=args.step_logdepth, tol_loss=args.tol_loss,
                       optimize_depth=not args.no_depth, optimize_pose=not args.no_pose,
                       weights=_weights(args))
    if len(frames) == 2:
        P, D, trace = refine_pair(images[0], images[1], depths[0], depths[1], init[0], K, cfg)
        poses, out_depths = [P], {frames[0]: D}
    else:
        poses, D, trace = refine_sequence(images, depths, init, K, cfg)
        out_depths = dict(zip(frames, D))

    os.makedirs(args.out, exist_ok=True)
    fileio.write_kitti_poses(os.path.join(args.out, "pose.txt"), [P.inverse() for P in poses])
    for k, d in out_depths.items():
        fileio.write_pfm(os.path.join(args.out, f"depth_{k:03d}.pfm"), d)
    fileio.write_csv(os.path.join(args.out, "trace.csv"), trace.to_rows(),
                     ["iter", "l_p_masked", "l_s", "l_gc", "total"])
    summary = {"status": trace.status, "iterations": len(trace.records) - 1,
               "initial_total": float(trace.totals[0]), "final_total": float(trace.totals[-1]),
               "pose_errors": [{"rot_deg": float(np.degrees(rotation_angle(
                   compose(P, g.inverse()).rotation))),
                   "trans_rel": float(np.linalg.norm(P.translation - g.translation)
                                      / max(np.linalg.norm(g.translation), 1e-12))}
                   for P, g in zip(poses, gt_rel)]}
    if len(frames) > 2:
        D = list(out_depths.values())
        summary["median_depth_ratio"] = float(np.median(D[-1]) / np.median(D[0]))
    with open(os.path.join(args.out, "summary.json"), "w") as f:
        f.write(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    _dump(summary)
    return 0


def _anchored(poses):
    first_inv = poses[0].inverse()
    return Trajectory([compose(P, first_inv) for P in poses])


def cmd_eval_traj(args):
    pred = _anchored(fileio.read_kitti_poses(args.pred))
    gt = _anchored(fileio.read_kitti_poses(args.gt))
    if len(pred) != len(gt):
        raise ScdepthError(f"length mismatch: {len(pred)} predicted vs {len(gt)} ground-truth poses")
    scale = None
    if args.align == "global":
        scale, aligned = align_global_scale(pred, gt)
    elif args.align == "per-frame":
        aligned, skipped = align_per_frame_scale(pred, gt)
    else:
        aligned, scale = pred, 1.0
    errs = kitti_odom_errors(aligned, gt)
    out = errs.to_dict()
    out.update({"align": args.align, "scale": scale})
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        pa, pg = aligned.positions(), gt.positions()
        rows = [{"frame": k, "x": pa[k, 0], "y": pa[k, 1], "z": pa[k, 2],
                 "gt_x": pg[k, 0], "gt_y": pg[k, 1], "gt_z": pg[k, 2]} for k in range(len(pa))]
        fileio.write_csv(os.path.join(args.out, "aligned.csv"), rows,
                         ["frame", "x", "y", "z", "gt_x", "gt_y", "gt_z"])
        svg = fileio.trajectory_svg([("ground truth", pg, "black"),
                                     (f"prediction ({args.align})", pa, "crimson")])
        with open(os.path.join(args.out, "trajectory.svg"), "w") as f:
            f.write(svg)
    _dump(out)
    return 0


def cmd_eval_depth(args):
    names = fileio.list_files(args.pred_dir, ".pfm")
    if not names:
        raise ScdepthError(f"no .pfm files in {args.pred_dir}")
    per = {}
    for name in names:
        gt_path = os.path.join(args.gt_dir, name)
        if not os.path.exists(gt_path):
            raise ScdepthError(f"missing ground truth {gt_path}")
        m = eigen_depth_metrics(fileio.read_pfm(os.path.join(args.pred_dir, name)),
                                fileio.read_pfm(gt_path),
                                median_scale=not args.no_median_scale, cap=args.cap)
        per[name] = m
    _dump({"frames": {k: v.to_dict() for k, v in per.items()},
           "mean": mean_depth_metrics(per.values()).to_dict()})
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="scdepth", description=__doc__.splitlines()[0])
    p.add_argument("--log-level", default="WARNING")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("scene", help="print a preset scene spec as JSON")
    s.add_argument("preset", choices=sorted(PRESETS))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=int, default=64)
    s.set_defaults(func=cmd_scene)

    s = sub.add_parser("synth", help="render a scene spec to image/depth/pose files")
    s.add_argument("spec")
    s.add_argument("out_dir")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("loss", help="evaluate the objective on one frame pair")
    _add_frame_flags(s, "--pair")
    _add_weight_flags(s)
    s.add_argument("--bidirectional", action="store_true")
    s.add_argument("--dump-dir", help="write d_diff.pfm and mask.pfm here (-1 marks invalid)")
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--min-size", type=int, default=8)
    s.add_argument("--max-size", type=int, default=16)
    s.add_argument("--tolerance", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("refine", help="refine pose(s) and depth(s) by descending the objective")
    _add_frame_flags(s, "--frames")
    _add_weight_flags(s)
    d = RefineConfig()
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--perturb-rot-deg", type=float, default=0.0)
    s.add_argument("--perturb-trans", type=float, default=0.0, help="fraction of |t|")
    s.add_argument("--depth-scales", type=float, nargs="+")
    s.add_argument("--translation-scales", type=float, nargs="+")
    s.add_argument("--max-iters", type=int, default=d.max_iters)
    s.add_argument("--step-twist", type=float, default=d.step_twist)
    s.add_argument("--step-logdepth", type=float, default=d.step_logdepth)
    s.add_argument("--tol-loss", type=float, default=d.tol_loss)
    s.add_argument("--no-depth", action="store_true", help="keep depths fixed")
    s.add_argument("--no-pose", action="store_true", help="keep poses fixed")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval-traj", help="KITTI-style odometry errors")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--align", choices=["global", "per-frame", "none"], default="global")
    s.add_argument("--out", help="directory for trajectory.svg and aligned.csv")
    s.set_defaults(func=cmd_eval_traj)

    s = sub.add_parser("eval-depth", help="depth metrics over matching PFM files")
    s.add_argument("pred_dir")
    s.add_argument("gt_dir")
    s.add_argument("--no-median-scale", action="store_true")
    s.add_argument("--cap", type=float, default=80.0)
    s.set_defaults(func=cmd_eval_depth)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ScdepthError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
