import os
import subprocess
import sys

import numpy as np
import pytest

from scdepth import _kernels as kn
from scdepth.evalkit import Trajectory
from scdepth.geometry import exp_twist

needs_numba = pytest.mark.skipif(not kn.HAS_NUMBA, reason="numba not installed")


def sample_inputs(rng, C=3, H=7, W=9):
    img = rng.uniform(0, 1, (C, H, W))
    u = rng.uniform(-0.5, W - 0.5, (H, W))
    v = rng.uniform(-0.5, H - 0.5, (H, W))
    mask = rng.uniform(size=(H, W)) < 0.8
    return img, u, v, mask


@needs_numba
def test_bilinear_paths_agree(rng):
    for _ in range(5):
        args = sample_inputs(rng)
        for a, b in zip(kn.bilinear_sample_numpy(*args), kn.bilinear_sample_numba(*args)):
            assert np.array_equal(a, b)


@needs_numba
def test_box_paths_agree(rng):
    x = rng.standard_normal((2, 6, 8))
    c = rng.standard_normal((2, 4, 6))
    assert np.array_equal(kn.box3_mean_numpy(x), kn.box3_mean_numba(x))
    assert np.array_equal(kn.box3_adjoint_numpy(c), kn.box3_adjoint_numba(c))


def test_box_adjoint_identity(rng):
    x = rng.standard_normal((2, 6, 8))
    c = rng.standard_normal((2, 4, 6))
    lhs = np.sum(kn.box3_mean(x) * c)
    rhs = np.sum(x * kn.box3_adjoint(c))
    assert abs(lhs - rhs) < 1e-12


def test_box_mean_matches_loops(rng):
    x = rng.standard_normal((1, 5, 6))
    out = kn.box3_mean(x)
    for i in range(3):
        for j in range(4):
            assert abs(out[0, i, j] - x[0, i:i + 3, j:j + 3].mean()) < 1e-15


def test_bilinear_slopes_match_differences(rng):
    img, u, v, mask = sample_inputs(rng, C=1)
    out, du, dv = kn.bilinear_sample(img, u, v, mask)
    h = 1e-6
    # stay inside the cell so the sampler is affine along each axis
    fu = u - np.floor(u)
    fv = v - np.floor(v)
    ok = mask & (fu > 1e-3) & (fu < 1 - 1e-3) & (fv > 1e-3) & (fv < 1 - 1e-3)
    up, _, _ = kn.bilinear_sample(img, u + h, v, mask)
    vp, _, _ = kn.bilinear_sample(img, u, v + h, mask)
    assert np.allclose(((up - out) / h)[:, ok], du[:, ok], atol=1e-6)
    assert np.allclose(((vp - out) / h)[:, ok], dv[:, ok], atol=1e-6)


@needs_numba
def test_segment_paths_agree(rng):
    rel = [exp_twist(np.concatenate([rng.uniform(-0.02, 0.02, 3), [0, 0, -2.0]])) for _ in range(150)]
    from scdepth.evalkit import chain_poses
    gt = chain_poses(rel)
    pred = Trajectory([P for P in gt.poses[:1]] + [
        type(P)._unchecked(P.rotation, P.translation * 1.02) for P in gt.poses[1:]])
    args = (np.ascontiguousarray(gt.matrices()), np.ascontiguousarray(pred.matrices()),
            np.ascontiguousarray(gt.distances()), np.array([100.0, 200.0]))
    a = kn.segment_errors_numpy(*args)
    b = kn.segment_errors_numba(*args)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
    assert np.allclose(a[2], b[2], rtol=1e-12, atol=1e-14)
    assert np.allclose(a[3], b[3], rtol=1e-9, atol=1e-14)


def test_env_flag_selects_numpy():
    env = dict(os.environ, SCDEPTH_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "import scdepth; print(scdepth.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_numpy_backend_loss_matches_default():
    code = ("import numpy as np; from scdepth import synth;"
            "s = synth.static_scene(2, (40, 40)); f = synth.render(s);"
            "print(repr(synth.perfect_loss_check(f, s.intrinsics).total))")
    run = lambda flag: subprocess.run(
        [sys.executable, "-c", code], env=dict(os.environ, SCDEPTH_DISABLE_NUMBA=flag),
        capture_output=True, text=True, check=True).stdout
    assert run("1") == run("0")
