import numpy as np
import pytest

from scdepth import synth
from scdepth.errors import EmptyValidSetError
from scdepth.geometry import PoseSE3, compose, exp_so3, rotation_angle
from scdepth.losses import LossWeights, total_loss
from scdepth.refine import RefineConfig, refine_pair, refine_sequence


def scene(builder, *args, **kw):
    spec = builder(*args, **kw)
    fr = synth.render(spec)
    return spec.intrinsics, fr


def perturb(P, deg, frac, seed=0):
    rng = np.random.default_rng(seed)
    axis = rng.standard_normal(3)
    axis /= np.linalg.norm(axis)
    dt = rng.standard_normal(3)
    dt *= frac * np.linalg.norm(P.translation) / np.linalg.norm(dt)
    return PoseSE3(exp_so3(np.radians(deg) * axis) @ P.rotation, P.translation + dt)


def pose_errors(P, gt):
    rot = np.degrees(rotation_angle(compose(P, gt.inverse()).rotation))
    return rot, np.linalg.norm(P.translation - gt.translation) / np.linalg.norm(gt.translation)


def test_fixed_point_at_ground_truth():
    K, fr = scene(synth.integer_shift_scene)
    P = synth.relative_pose(fr, 0, 1)
    P2, D, trace = refine_pair(fr[0].image, fr[1].image, fr[0].depth, fr[1].depth, P, K,
                               RefineConfig(max_iters=1))
    assert P2.allclose(P, atol=1e-6)
    assert np.max(np.abs(D - fr[0].depth)) < 1e-6
    assert trace.status == "converged"


def test_pose_recovery_small_scene():
    K, fr = scene(synth.fronto_parallel_scene, 0, (48, 48))
    gt = synth.relative_pose(fr, 0, 1)
    cfg = RefineConfig(max_iters=500, optimize_depth=False)
    P, _, trace = refine_pair(fr[0].image, fr[1].image, fr[0].depth, fr[1].depth,
                              perturb(gt, 1.0, 0.05), K, cfg)
    rot, trans = pose_errors(P, gt)
    assert rot < 0.05 and trans < 0.005
    assert trace.totals[-1] < trace.totals[0]


def test_monotone_descent_and_trace_rows():
    K, fr = scene(synth.static_scene, 4, (40, 40))
    gt = synth.relative_pose(fr, 0, 1)
    P, D, trace = refine_pair(fr[0].image, fr[1].image, 1.1 * fr[0].depth, fr[1].depth,
                              perturb(gt, 0.5, 0.1, 3), K, RefineConfig(max_iters=40))
    t = trace.totals
    assert np.all(np.diff(t) <= 0)
    rows = trace.to_rows()
    assert rows[0]["iter"] == 0 and len(rows) == len(trace.records)
    assert set(rows[0]) == {"iter", "l_p_masked", "l_s", "l_gc", "total"}
    assert trace.status in ("converged", "max_iters", "stalled")


def test_scale_coupling_keeps_loss_low():
    K, fr = scene(synth.fronto_parallel_scene, 0, (48, 48))
    gt = synth.relative_pose(fr, 0, 1)
    init = PoseSE3(gt.rotation, 2 * gt.translation)
    P, D, trace = refine_pair(fr[0].image, fr[1].image, 2 * fr[0].depth, 2 * fr[1].depth, init, K,
                              RefineConfig(max_iters=20))
    assert trace.totals[0] < 1e-3 and trace.totals[-1] < 1e-3
    assert abs(np.linalg.norm(P.translation) / np.linalg.norm(gt.translation) - 2) < 1e-3
    assert abs(np.median(D) / np.median(fr[0].depth) - 2) < 1e-3


def test_stalled_status_when_line_search_fails():
    K, fr = scene(synth.static_scene, 1, (32, 32))
    gt = synth.relative_pose(fr, 0, 1)
    cfg = RefineConfig(max_iters=5, step_twist=1e3, step_logdepth=1e3, max_backtracks=1)
    _, _, trace = refine_pair(fr[0].image, fr[1].image, fr[0].depth, fr[1].depth,
                              perturb(gt, 1.0, 0.2), K, cfg)
    assert trace.status == "stalled"
    assert len(trace.records) == 1


def test_empty_valid_set_at_start():
    K, fr = scene(synth.static_scene, 1, (32, 32))
    far = PoseSE3(np.eye(3), [1e3, 0, 0])
    with pytest.raises(EmptyValidSetError):
        refine_pair(fr[0].image, fr[1].image, fr[0].depth, fr[1].depth, far, K)


def test_nothing_to_optimize():
    K, fr = scene(synth.static_scene, 1, (32, 32))
    gt = synth.relative_pose(fr, 0, 1)
    cfg = RefineConfig(optimize_depth=False, optimize_pose=False)
    P, D, trace = refine_pair(fr[0].image, fr[1].image, fr[0].depth, fr[1].depth, gt, K, cfg)
    assert P is gt and len(trace.records) == 1


def test_config_validation():
    with pytest.raises(ValueError):
        RefineConfig(max_iters=0)
    with pytest.raises(ValueError):
        RefineConfig(step_twist=0.0)


def gc_ratio(gamma, size=(48, 48), iters=120):
    spec = synth.fronto_parallel_scene(0, size, frames=3,
                                       step=PoseSE3(exp_so3([0.005, -0.01, 0.0]), [0.25, -0.05, 0.0]))
    fr = synth.render(spec)
    gt = [f.depth for f in fr]
    rel = [synth.relative_pose(fr, k, k + 1) for k in range(2)]
    cfg = RefineConfig(max_iters=iters, optimize_pose=False, step_logdepth=0.05,
                       weights=LossWeights(gamma=gamma))
    _, D, _ = refine_sequence([f.image for f in fr], [gt[0], gt[1], 2 * gt[2]], rel,
                              spec.intrinsics, cfg)
    return (np.median(D[2]) / np.median(gt[2])) / (np.median(D[0]) / np.median(gt[0]))


@pytest.mark.slow
def test_geometry_consistency_propagates_scale():
    assert abs(gc_ratio(0.0) - 2.0) < 0.2
    assert abs(gc_ratio(0.5) - 1.0) < 0.1


def test_sequence_argument_checks():
    K, fr = scene(synth.static_scene, 1, (16, 16))
    with pytest.raises(ValueError):
        refine_sequence([fr[0].image, fr[1].image], [fr[0].depth], [PoseSE3.identity()], K)


def test_mask_separates_moving_box_after_refinement():
    K, fr = scene(synth.moving_box_scene, 0, (64, 64))
    P = synth.relative_pose(fr, 0, 1)
    P2, D, _ = refine_pair(fr[0].image, fr[1].image, fr[0].depth, fr[1].depth, P, K,
                           RefineConfig(max_iters=100))
    rep = total_loss(fr[0].image, fr[1].image, D, fr[1].depth, P2, K)
    dyn = fr[0].dynamic_mask & rep.mask.valid
    sta = ~fr[0].dynamic_mask & rep.mask.valid
    assert rep.mask.values[sta].mean() - rep.mask.values[dyn].mean() >= 0.2
