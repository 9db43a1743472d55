"""Analytic gradients of the one-direction objective and a finite-difference oracle.

Pose gradients are taken with respect to a left perturbation
``P_ab <- exp(xi) P_ab`` at ``xi = 0``, ordered ``[omega, v]``. The valid
set is held fixed at the evaluation point on both paths.
"""

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .geometry import as_depth, exp_twist, compose
from .losses import LossWeights, ZERO_TOL, _ssim_windows, evaluate_direction


@dataclass(eq=False)
class GradReport:
    d_loss_d_depth: np.ndarray
    d_loss_d_twist: np.ndarray
    value: float
    d_loss_d_depth_b: np.ndarray = None

    def as_vector(self):
        parts = [self.d_loss_d_twist, self.d_loss_d_depth.ravel()]
        if self.d_loss_d_depth_b is not None:
            parts.append(self.d_loss_d_depth_b.ravel())
        return np.concatenate(parts)


def _dead_sign(x, scale):
    s = np.sign(x)
    s[np.abs(x) <= ZERO_TOL * scale] = 0.0
    return s


def _fold_to_windows(a):
    # adjoint of the edge padding that maps (h, w) windows onto (H, W) pixels
    H, W = a.shape
    ri = np.clip(np.arange(H) - 1, 0, H - 3)
    ci = np.clip(np.arange(W) - 1, 0, W - 3)
    out = np.zeros((H - 2, W - 2))
    np.add.at(out, (ri[:, None], ci[None, :]), a)
    return out


def _smoothness_grad(D, I, normalize_mean):
    n = D.size
    Dn = D / D.mean() if normalize_mean else D
    wx = np.exp(-np.abs(I[:, :, 1:] - I[:, :, :-1]).mean(axis=0))
    wy = np.exp(-np.abs(I[:, 1:, :] - I[:, :-1, :]).mean(axis=0))
    rx = 2.0 * wx * wx * (Dn[:, 1:] - Dn[:, :-1]) / n
    ry = 2.0 * wy * wy * (Dn[1:, :] - Dn[:-1, :]) / n
    g = np.zeros_like(D)
    g[:, 1:] += rx
    g[:, :-1] -= rx
    g[1:, :] += ry
    g[:-1, :] -= ry
    if normalize_mean:
        m = D.mean()
        g = g / m - np.sum(g * D) / (m * m * n)
    return g


def loss_gradients(I_a, I_b, D_a, D_b, P_ab, K, w=None, *, detach_mask=False,
                   detach_interp=False, normalize_depth=False):
    """Gradient of the forward-direction total loss.

    Returns derivatives with respect to every ``D_a`` pixel, the pose
    twist and every ``D_b`` pixel. ``detach_mask`` stops the gradient
    through M; ``detach_interp`` treats the interpolated ``D_b`` as a
    constant inside the inconsistency term.
    """
    w = w or LossWeights()
    ev = evaluate_direction(I_a, I_b, D_a, D_b, P_ab, K, w, normalize_depth=normalize_depth)
    warp = ev.warp
    V = warp.valid
    N = float(V.sum())
    I_a = ev.I_a
    C, H, W = I_a.shape
    per = np.where(V, ev.per_pixel_lp, 0.0)
    M = np.where(V, ev.mask.values, 0.0)
    z = np.where(V, warp.proj_depth, 1.0)
    Dp = np.where(V, warp.interp_depth, 1.0)

    # inconsistency term
    g_dd = np.zeros((H, W))
    g_dd[V] = w.gamma / N
    if not detach_mask:
        g_dd[V] -= w.alpha / N * per[V]
    S = z + Dp
    sgn = _dead_sign(z - Dp, S)
    g_z = g_dd * 2.0 * sgn * Dp / (S * S)
    g_Dp = np.zeros((H, W)) if detach_interp else g_dd * (-2.0 * sgn * z / (S * S))

    # photometric term, L1 part
    a_p = w.alpha / N * M
    e = I_a - ev.synth
    g_syn = a_p[None] * (-w.lambda_i / C) * _dead_sign(e, 1.0)

    # photometric term, SSIM part through the 3x3 window statistics
    x = np.ascontiguousarray(I_a)
    y = np.ascontiguousarray(ev.synth)
    st = _ssim_windows(x, y)
    s = st["ssim"]
    raw = (1.0 - s) / 2.0
    active = (raw >= 0.0) & (raw <= 1.0)
    win_w = _fold_to_windows(a_p * w.lambda_s)
    coef = -0.5 * win_w[None] / C * active
    mx, my = st["mx"], st["my"]
    c_m = coef * s * (2 * mx / st["a1"] - 2 * mx / st["a2"] - 2 * my / st["b1"] + 2 * my / st["b2"])
    c_e = coef * (-s / st["b2"])
    c_x = coef * (2 * s / st["a2"])
    g_syn += (_kernels.box3_adjoint(np.ascontiguousarray(c_m))
              + 2.0 * y * _kernels.box3_adjoint(np.ascontiguousarray(c_e))
              + x * _kernels.box3_adjoint(np.ascontiguousarray(c_x)))
    g_syn[:, ~V] = 0.0

    # sample locations
    g_u = np.sum(g_syn * warp.image_du, axis=0) + g_Dp * warp.depth_du
    g_v = np.sum(g_syn * warp.image_dv, axis=0) + g_Dp * warp.depth_dv
    g_u[~V] = 0.0
    g_v[~V] = 0.0
    g_z[~V] = 0.0

    Y = warp.points
    zz = Y[..., 2]
    gY = np.zeros((H, W, 3))
    gY[V, 0] = g_u[V] * K.fx / zz[V]
    gY[V, 1] = g_v[V] * K.fy / zz[V]
    gY[V, 2] = (-g_u[V] * K.fx * Y[V, 0] / zz[V] ** 2
                - g_v[V] * K.fy * Y[V, 1] / zz[V] ** 2 + g_z[V])

    g_twist = np.concatenate([np.cross(Y[V], gY[V]).sum(axis=0), gY[V].sum(axis=0)])
    g_depth = np.einsum("hwk,hwk->hw", gY @ P_ab.rotation, warp.rays)
    if w.beta:
        g_depth += w.beta * _smoothness_grad(ev.D_a, I_a, normalize_depth)

    g_depth_b = np.zeros((H, W))
    if not detach_interp and V.any():
        u, v = warp.u[V], warp.v[V]
        x0 = np.clip(np.floor(u).astype(np.int64), 0, W - 2)
        y0 = np.clip(np.floor(v).astype(np.int64), 0, H - 2)
        ax, ay = u - x0, v - y0
        g = g_Dp[V]
        np.add.at(g_depth_b, (y0, x0), g * (1 - ax) * (1 - ay))
        np.add.at(g_depth_b, (y0, x0 + 1), g * ax * (1 - ay))
        np.add.at(g_depth_b, (y0 + 1, x0), g * (1 - ax) * ay)
        np.add.at(g_depth_b, (y0 + 1, x0 + 1), g * ax * ay)

    return GradReport(d_loss_d_depth=g_depth, d_loss_d_twist=g_twist,
                      value=ev.report.total, d_loss_d_depth_b=g_depth_b)


def central_difference(f, x0, h):
    """Central-difference gradient of scalar ``f`` at ``x0`` with per-entry steps ``h``."""
    x0 = np.asarray(x0, dtype=float)
    h = np.broadcast_to(np.asarray(h, dtype=float), x0.shape)
    g = np.zeros_like(x0)
    x = x0.copy()
    for i in np.ndindex(x0.shape):
        x[i] = x0[i] + h[i]
        fp = f(x)
        x[i] = x0[i] - h[i]
        fm = f(x)
        x[i] = x0[i]
        g[i] = (fp - fm) / (2.0 * h[i])
    return g


def fd_gradient(I_a, I_b, D_a, D_b, P_ab, K, w=None, *, h_twist=1e-5, h_depth_rel=1e-4,
                detach_mask=False, detach_interp=False, normalize_depth=False,
                wrt_depth_b=True):
    """Central differences of the forward total loss with the valid set frozen."""
    w = w or LossWeights()
    D_a = as_depth(D_a).copy()
    D_b = as_depth(D_b).copy()
    base = evaluate_direction(I_a, I_b, D_a, D_b, P_ab, K, w, normalize_depth=normalize_depth)
    frozen = dict(valid=base.warp.valid, normalize_depth=normalize_depth,
                  frozen_mask=base.mask.values.copy() if detach_mask else None,
                  frozen_interp=base.warp.interp_depth.copy() if detach_interp else None)

    def f(Da, Db, P):
        return evaluate_direction(I_a, I_b, Da, Db, P, K, w, **frozen).report.total

    g_twist = central_difference(lambda xi: f(D_a, D_b, compose(P_ab, exp_twist(xi))),
                                 np.zeros(6), h_twist)
    g_depth = central_difference(lambda d: f(d, D_b, P_ab), D_a, h_depth_rel * D_a)
    g_depth_b = None
    if wrt_depth_b:
        g_depth_b = central_difference(lambda d: f(D_a, d, P_ab), D_b, h_depth_rel * D_b)
    return GradReport(d_loss_d_depth=g_depth, d_loss_d_twist=g_twist,
                      value=base.report.total, d_loss_d_depth_b=g_depth_b)


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest ``|a - n| / max(|n|, floor)`` over all gradient entries."""
    a = analytic.as_vector() if isinstance(analytic, GradReport) else np.asarray(analytic)
    n = numeric.as_vector() if isinstance(numeric, GradReport) else np.asarray(numeric)
    if a.shape != n.shape:
        raise ValueError(f"gradient shapes differ: {a.shape} vs {n.shape}")
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(n), floor)))


def random_instance(rng, size, channels=3, margin=1e-3):
    """Random small problem for gradient checks.

    ``I_a`` is offset from the warped ``I_b`` by at least 0.05 per channel
    and depths are nudged until every projection sits at least ``margin``
    away from the integer grid, so neither the L1 kink nor a bilinear cell
    boundary lies within finite-difference reach.
    """
    from .geometry import Intrinsics, warp_pair

    H, W = size
    K = Intrinsics(fx=rng.uniform(0.8, 1.2) * W, fy=rng.uniform(0.8, 1.2) * W,
                   cx=(W - 1) / 2 + rng.uniform(-0.5, 0.5),
                   cy=(H - 1) / 2 + rng.uniform(-0.5, 0.5), width=W, height=H)
    I_b = np.clip(0.5 + 0.35 * rng.standard_normal((channels, H, W)), 0.0, 1.0)
    D_a = rng.uniform(2.0, 4.0, (H, W))
    D_b = rng.uniform(2.0, 4.0, (H, W))
    P = exp_twist(np.concatenate([rng.uniform(-0.03, 0.03, 3), rng.uniform(-0.1, 0.1, 3)]))
    for _ in range(50):
        warp = warp_pair(I_b, D_a, D_b, P, K)
        V = warp.valid
        fu = warp.u - np.round(warp.u)
        fv = warp.v - np.round(warp.v)
        bad = V & ((np.abs(fu) < margin) | (np.abs(fv) < margin))
        gap = np.abs(warp.proj_depth - warp.interp_depth)
        bad |= V & (gap < 1e-3)
        if not bad.any():
            break
        D_a[bad] *= 1.0 + rng.uniform(0.002, 0.01, bad.sum())
    synth = np.where(V[None], warp.image, I_b)
    off = rng.uniform(0.05, 0.2, synth.shape)
    I_a = np.where(synth > 0.5, synth - off, synth + off)
    I_a = np.where(V[None], I_a, rng.uniform(0, 1, synth.shape))
    return I_a, I_b, D_a, D_b, P, K
