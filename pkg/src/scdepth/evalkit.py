"""Trajectory and depth evaluation protocols.

Trajectories hold camera-to-world poses with the first pose at identity.
Relative poses fed to :func:`chain_poses` follow the warp convention of
:mod:`scdepth.geometry` (``P_ab`` maps camera-a coordinates to camera-b
coordinates).
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (DegenerateScaleError, DimensionError, EmptyMaskError,
                     NoValidSubsequenceError)
from .geometry import PoseSE3, compose

KITTI_LENGTHS = (100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0)


@dataclass(eq=False)
class Trajectory:
    poses: list
    path_length: np.ndarray = None

    def __post_init__(self):
        if not self.poses:
            raise DimensionError("trajectory must contain at least one pose")

    def __len__(self):
        return len(self.poses)

    @classmethod
    def from_matrices(cls, mats, path_length=None):
        return cls([PoseSE3.from_matrix(m, check=False) for m in mats], path_length)

    def matrices(self):
        return np.stack([P.matrix() for P in self.poses])

    def positions(self):
        return np.stack([P.translation for P in self.poses])

    def distances(self):
        """Cumulative path length along the trajectory."""
        if self.path_length is not None:
            return np.asarray(self.path_length, dtype=float)
        steps = np.linalg.norm(np.diff(self.positions(), axis=0), axis=1)
        return np.concatenate([[0.0], np.cumsum(steps)])

    def relatives(self):
        """Per-step motions ``T_k^-1 T_{k+1}`` (pose of k+1 seen from k)."""
        return [compose(self.poses[k + 1], self.poses[k].inverse())
                for k in range(len(self.poses) - 1)]


@dataclass
class OdomErrors:
    t_err: float
    r_err: float
    by_length: dict = field(default_factory=dict)
    count: int = 0

    def to_dict(self):
        return {"t_err": self.t_err, "r_err": self.r_err, "count": self.count,
                "by_length": {str(int(k)): v for k, v in self.by_length.items()}}


@dataclass
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rms: float
    rms_log: float
    a1: float
    a2: float
    a3: float

    def as_tuple(self):
        return (self.abs_rel, self.sq_rel, self.rms, self.rms_log, self.a1, self.a2, self.a3)

    def to_dict(self):
        return {"abs_rel": self.abs_rel, "sq_rel": self.sq_rel, "rms": self.rms,
                "rms_log": self.rms_log, "a1": self.a1, "a2": self.a2, "a3": self.a3}


# ---------------------------------------------------------------------------
# trajectories


def chain_poses(relatives):
    """Accumulate relative poses ``P_{k,k+1}`` into a camera-to-world trajectory."""
    relatives = list(relatives)
    if not relatives:
        raise DimensionError("need at least one relative pose")
    poses = [PoseSE3.identity()]
    for P in relatives:
        # T_{k+1} = T_k @ P^-1, i.e. apply P^-1 first
        poses.append(compose(P.inverse(), poses[-1]))
    return Trajectory(poses)


def unchain_poses(traj):
    """Inverse of :func:`chain_poses`."""
    return [compose(traj.poses[k + 1], traj.poses[k].inverse()).inverse()
            for k in range(len(traj) - 1)]


def scale_translations(traj, s):
    return Trajectory([PoseSE3._unchecked(P.rotation, s * P.translation) for P in traj.poses],
                      traj.path_length)


def align_global_scale(pred, gt):
    """Least-squares single scale on consecutive position deltas.

    Returns ``(scale, aligned)`` where ``aligned`` has every translation of
    ``pred`` multiplied by ``scale``; rotations are untouched.
    """
    if len(pred) != len(gt) or len(pred) < 2:
        raise DimensionError("trajectories must have equal length >= 2")
    dp = np.diff(pred.positions(), axis=0)
    dg = np.diff(gt.positions(), axis=0)
    den = float(np.sum(dp * dp))
    if den == 0.0:
        raise DegenerateScaleError("predicted trajectory has no translation")
    s = float(np.sum(dp * dg)) / den
    return s, scale_translations(pred, s)


def align_per_frame_scale(pred, gt):
    """Rescale every predicted step to the ground-truth step length.

    Returns ``(aligned, skipped)``; steps whose ground-truth or predicted
    length is zero are left unscaled and their indices reported.
    """
    if len(pred) != len(gt):
        raise DimensionError("trajectories must have equal length")
    rel_p = pred.relatives()
    rel_g = gt.relatives()
    skipped = []
    poses = [pred.poses[0]]
    for k, (rp, rg) in enumerate(zip(rel_p, rel_g)):
        np_, ng = np.linalg.norm(rp.translation), np.linalg.norm(rg.translation)
        if ng == 0.0 or np_ == 0.0:
            skipped.append(k)
            warnings.warn(f"step {k}: zero-length step, left unscaled", RuntimeWarning)
            step = rp
        else:
            step = PoseSE3._unchecked(rp.rotation, rp.translation * (ng / np_))
        poses.append(compose(step, poses[-1]))
    return Trajectory(poses, pred.path_length), skipped


def kitti_odom_errors(pred, gt, lengths=KITTI_LENGTHS):
    """Average translation (%) and rotation (deg / 100 m) drift over all
    fixed-length segments along the ground-truth path.
    """
    if len(pred) != len(gt):
        raise DimensionError("trajectories must have equal length")
    dist = np.ascontiguousarray(gt.distances())
    firsts, lens, terr, rerr = _kernels.segment_errors(
        np.ascontiguousarray(gt.matrices()), np.ascontiguousarray(pred.matrices()),
        dist, np.asarray(lengths, dtype=float))
    if firsts.size == 0:
        raise NoValidSubsequenceError(
            f"ground-truth path of {dist[-1]:.1f} m is shorter than {min(lengths)} m")
    t_rel = terr / lens
    r_rel = rerr / lens
    by_length = {}
    for l in lengths:
        sel = lens == l
        if sel.any():
            by_length[l] = {"t_err": float(100.0 * t_rel[sel].mean()),
                            "r_err": float(np.degrees(r_rel[sel].mean()) * 100.0),
                            "count": int(sel.sum())}
    return OdomErrors(t_err=float(100.0 * t_rel.mean()),
                      r_err=float(np.degrees(r_rel.mean()) * 100.0),
                      by_length=by_length, count=int(firsts.size))


def _snippet_positions(snippet):
    rows = []
    for item in snippet:
        if isinstance(item, PoseSE3):
            rows.append(item.translation)
        else:
            a = np.asarray(item, dtype=float)
            rows.append(a[:3, 3] if a.ndim == 2 else a.reshape(3))
    return np.stack(rows)


def snippet_ate(pred, gt):
    """Scale-fitted translation RMSE of one snippet, both anchored at their first position."""
    p = pred - pred[0]
    g = gt - gt[0]
    den = float(np.sum(p * p))
    if den == 0.0:
        raise DegenerateScaleError("predicted snippet has no translation")
    s = float(np.sum(p * g)) / den
    return float(np.sqrt(np.mean(np.sum((s * p - g) ** 2, axis=1))))


def ate_5frame(pred_snippets, gt_snippets):
    """Mean and standard deviation of the per-snippet ATE over 5-frame snippets."""
    pred_snippets, gt_snippets = list(pred_snippets), list(gt_snippets)
    if len(pred_snippets) != len(gt_snippets) or not pred_snippets:
        raise DimensionError("need the same non-zero number of predicted and gt snippets")
    errs = []
    for ps, gs in zip(pred_snippets, gt_snippets):
        p, g = _snippet_positions(ps), _snippet_positions(gs)
        if p.shape != (5, 3) or g.shape != (5, 3):
            raise DimensionError(f"snippets must hold exactly 5 poses, got {len(p)} and {len(g)}")
        errs.append(snippet_ate(p, g))
    errs = np.asarray(errs)
    return float(errs.mean()), float(errs.std())


# ---------------------------------------------------------------------------
# depth


def eigen_depth_metrics(pred, gt, mask=None, median_scale=True, cap=80.0, min_depth=1e-3):
    """Standard monocular depth errors and threshold accuracies over ``mask``."""
    pred = np.asarray(getattr(pred, "values", pred), dtype=float)
    gt = np.asarray(getattr(gt, "values", gt), dtype=float)
    if pred.shape != gt.shape:
        raise DimensionError(f"shape mismatch {pred.shape} vs {gt.shape}")
    mask = gt > 0 if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("evaluation mask is empty")
    d = pred[mask]
    t = gt[mask]
    if median_scale:
        d = d * (np.median(t) / np.median(d))
    d = np.clip(d, min_depth, cap)
    ratio = np.maximum(d / t, t / d)
    diff = d - t
    return DepthMetrics(abs_rel=float(np.mean(np.abs(diff) / t)),
                        sq_rel=float(np.mean(diff ** 2 / t)),
                        rms=float(np.sqrt(np.mean(diff ** 2))),
                        rms_log=float(np.sqrt(np.mean((np.log(d) - np.log(t)) ** 2))),
                        a1=float(np.mean(ratio < 1.25)),
                        a2=float(np.mean(ratio < 1.25 ** 2)),
                        a3=float(np.mean(ratio < 1.25 ** 3)))


def mean_depth_metrics(items):
    items = list(items)
    if not items:
        raise EmptyMaskError("no depth metrics to average")
    arr = np.array([m.as_tuple() for m in items])
    return DepthMetrics(*map(float, arr.mean(axis=0)))
