"""Photometric, smoothness and geometry-consistency loss terms.

Per-pixel maps are full H x W arrays holding NaN outside the valid set
of the warp they were computed from.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import DimensionError, EmptyValidSetError, ScdepthError
from .geometry import as_depth, as_image, check_grids, warp_pair

SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2

# residuals this small are treated as exact zeros when taking signs, so an
# exact fit has a zero subgradient despite rounding in the warp
ZERO_TOL = 1e-12


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 0.1
    gamma: float = 0.5
    lambda_i: float = 0.15
    lambda_s: float = 0.85

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lambda_i", "lambda_s"):
            val = getattr(self, name)
            if not (val >= 0 and np.isfinite(val)):
                raise ScdepthError(f"weight {name} must be finite and >= 0, got {val}")

    def to_dict(self):
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma,
                "lambda_i": self.lambda_i, "lambda_s": self.lambda_s}


@dataclass(frozen=True, eq=False)
class ValidMap:
    values: np.ndarray
    valid: np.ndarray

    @property
    def valid_count(self):
        return int(self.valid.sum())

    def valid_values(self):
        return self.values[self.valid]

    def mean(self):
        if not self.valid.any():
            raise EmptyValidSetError("valid set is empty")
        return float(np.mean(self.values[self.valid]))


class InconsistencyMap(ValidMap):
    """Normalized depth disagreement, in [0, 1] on the valid set."""


class WeightMask(ValidMap):
    """Per-pixel photometric weight ``1 - D_diff``."""


# ---------------------------------------------------------------------------
# SSIM


def _ssim_windows(x, y):
    mx = _kernels.box3_mean(x)
    my = _kernels.box3_mean(y)
    exx = _kernels.box3_mean(x * x)
    eyy = _kernels.box3_mean(y * y)
    exy = _kernels.box3_mean(x * y)
    a1 = 2.0 * mx * my + SSIM_C1
    a2 = 2.0 * (exy - mx * my) + SSIM_C2
    b1 = mx * mx + my * my + SSIM_C1
    b2 = (exx - mx * mx) + (eyy - my * my) + SSIM_C2
    s = (a1 * a2) / (b1 * b2)
    return {"mx": mx, "my": my, "a1": a1, "a2": a2, "b1": b1, "b2": b2, "ssim": s}


def _pad_windows(m):
    return np.pad(m, ((0, 0), (1, 1), (1, 1)), mode="edge")


def ssim_dissimilarity(I_a, I_a_synth):
    """Per-pixel ``(1 - SSIM) / 2`` with a 3x3 box window, clamped to [0, 1].

    Windows stay fully inside the image; border pixels reuse the nearest
    full window. Colour images average the per-channel result.
    """
    x = as_image(I_a)
    y = as_image(I_a_synth)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch {x.shape} vs {y.shape}")
    if x.shape[1] < 3 or x.shape[2] < 3:
        raise DimensionError("SSIM needs images of at least 3x3")
    s = _ssim_windows(np.ascontiguousarray(x), np.ascontiguousarray(y))["ssim"]
    d = np.clip((1.0 - _pad_windows(s)) / 2.0, 0.0, 1.0)
    return d.mean(axis=0)


# ---------------------------------------------------------------------------
# individual terms


def _filled_synth(I_a, warp):
    # pixels outside V take the reference value so SSIM windows that
    # straddle the valid-set border compare like with like
    return np.where(warp.valid[None], warp.image, I_a)


def photometric_map(I_a, synth, valid, w):
    """Per-pixel photometric error (NaN outside ``valid``)."""
    l1 = np.abs(I_a - synth).mean(axis=0)
    per = w.lambda_i * l1 + w.lambda_s * ssim_dissimilarity(I_a, synth)
    return np.where(valid, per, np.nan)


def photometric_loss(I_a, warp, w=None):
    """Mean photometric error over the valid set; returns ``(scalar, map)``."""
    w = w or LossWeights()
    I_a = as_image(I_a)
    if I_a.shape != warp.image.shape:
        raise DimensionError(f"I_a shape {I_a.shape} does not match warp {warp.image.shape}")
    if not warp.valid.any():
        raise EmptyValidSetError("no pixel projects into the other frame")
    per = photometric_map(I_a, _filled_synth(I_a, warp), warp.valid, w)
    return float(np.mean(per[warp.valid])), per


def smoothness_loss(D_a, I_a, normalize_mean=False):
    """Edge-aware squared depth-gradient penalty, normalized by pixel count."""
    D = as_depth(D_a)
    I = as_image(I_a)
    if I.shape[1:] != D.shape:
        raise DimensionError(f"image {I.shape[1:]} and depth {D.shape} differ")
    if normalize_mean:
        D = D / D.mean()
    wx = np.exp(-np.abs(I[:, :, 1:] - I[:, :, :-1]).mean(axis=0))
    wy = np.exp(-np.abs(I[:, 1:, :] - I[:, :-1, :]).mean(axis=0))
    gx = wx * (D[:, 1:] - D[:, :-1])
    gy = wy * (D[1:, :] - D[:-1, :])
    return float((np.sum(gx * gx) + np.sum(gy * gy)) / D.size)


def normalized_difference(x, y):
    """``|x - y| / (x + y)`` elementwise."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.abs(x - y) / (x + y)


def depth_inconsistency(warp):
    """Normalized disagreement between projected and interpolated depth."""
    vals = np.full(warp.valid.shape, np.nan)
    v = warp.valid
    vals[v] = normalized_difference(warp.proj_depth[v], warp.interp_depth[v])
    return InconsistencyMap(vals, v.copy())


def gc_loss(d_diff):
    if not d_diff.valid.any():
        raise EmptyValidSetError("valid set is empty")
    return d_diff.mean()


def weight_mask(d_diff):
    return WeightMask(np.where(d_diff.valid, 1.0 - d_diff.values, np.nan), d_diff.valid.copy())


def masked_photometric_loss(per_pixel_lp, mask):
    v = mask.valid
    if not v.any():
        raise EmptyValidSetError("valid set is empty")
    lp = np.asarray(per_pixel_lp, dtype=float)
    return float(np.mean(mask.values[v] * lp[v]))


# ---------------------------------------------------------------------------
# full objective


@dataclass(eq=False)
class LossReport:
    l_p: float
    l_p_masked: float
    l_s: float
    l_gc: float
    total: float
    d_diff: InconsistencyMap
    mask: WeightMask
    valid_count: int
    per_pixel_lp: np.ndarray
    weights: LossWeights = field(default_factory=LossWeights)
    backward: "LossReport | None" = None

    def to_dict(self):
        return {"l_p": self.l_p, "l_p_masked": self.l_p_masked, "l_s": self.l_s,
                "l_gc": self.l_gc, "total": self.total, "valid_count": self.valid_count}


@dataclass(eq=False)
class DirectionEval:
    """Intermediate quantities of one warp direction; reused by the gradients."""

    I_a: np.ndarray
    D_a: np.ndarray
    warp: object
    synth: np.ndarray
    per_pixel_lp: np.ndarray
    d_diff: InconsistencyMap
    mask: WeightMask
    interp_used: np.ndarray
    mask_used: np.ndarray
    report: LossReport


def evaluate_direction(I_a, I_b, D_a, D_b, P_ab, K, w=None, *, valid=None,
                       normalize_depth=False, frozen_mask=None, frozen_interp=None):
    """One-direction objective with all intermediates.

    ``valid`` freezes the valid set; ``frozen_mask`` / ``frozen_interp``
    substitute fixed arrays for M and for the interpolated depth inside
    the inconsistency term (used to check the detached-gradient variants).
    """
    w = w or LossWeights()
    I_a = as_image(I_a)
    I_b = as_image(I_b)
    D_a = as_depth(D_a)
    check_grids(I_b, D_a, as_depth(D_b), K, I_a=I_a)
    warp = warp_pair(I_b, D_a, D_b, P_ab, K, valid=valid)
    V = warp.valid
    if not V.any():
        raise EmptyValidSetError("no pixel projects into the other frame")

    synth = _filled_synth(I_a, warp)
    per = photometric_map(I_a, synth, V, w)
    l_p = float(np.mean(per[V]))

    interp = warp.interp_depth if frozen_interp is None else np.where(V, frozen_interp, np.nan)
    dd_vals = np.full(V.shape, np.nan)
    dd_vals[V] = normalized_difference(warp.proj_depth[V], interp[V])
    d_diff = InconsistencyMap(dd_vals, V.copy())
    mask = weight_mask(d_diff)
    m_used = mask.values if frozen_mask is None else np.where(V, frozen_mask, np.nan)

    l_pm = float(np.mean(m_used[V] * per[V]))
    l_s = smoothness_loss(D_a, I_a, normalize_mean=normalize_depth)
    l_gc = float(np.mean(dd_vals[V]))
    total = w.alpha * l_pm + w.beta * l_s + w.gamma * l_gc
    report = LossReport(l_p=l_p, l_p_masked=l_pm, l_s=l_s, l_gc=l_gc, total=total,
                        d_diff=d_diff, mask=mask, valid_count=int(V.sum()),
                        per_pixel_lp=per, weights=w)
    return DirectionEval(I_a=I_a, D_a=D_a, warp=warp, synth=synth, per_pixel_lp=per,
                         d_diff=d_diff, mask=mask, interp_used=interp, mask_used=m_used,
                         report=report)


def total_loss(I_a, I_b, D_a, D_b, P_ab, K, w=None, bidirectional=False,
               normalize_depth=False):
    """Weighted objective ``alpha*L_p^M + beta*L_s + gamma*L_GC``.

    With ``bidirectional`` the roles of the two frames are swapped under the
    inverse pose and every scalar term is the mean of both directions; the
    maps and ``valid_count`` describe the forward direction.
    """
    w = w or LossWeights()
    fwd = evaluate_direction(I_a, I_b, D_a, D_b, P_ab, K, w,
                             normalize_depth=normalize_depth).report
    if not bidirectional:
        return fwd
    bwd = evaluate_direction(I_b, I_a, D_b, D_a, P_ab.inverse(), K, w,
                             normalize_depth=normalize_depth).report
    avg = {k: 0.5 * (getattr(fwd, k) + getattr(bwd, k))
           for k in ("l_p", "l_p_masked", "l_s", "l_gc")}
    total = w.alpha * avg["l_p_masked"] + w.beta * avg["l_s"] + w.gamma * avg["l_gc"]
    return LossReport(total=total, d_diff=fwd.d_diff, mask=fwd.mask,
                      valid_count=fwd.valid_count, per_pixel_lp=fwd.per_pixel_lp,
                      weights=w, backward=bwd, **avg)
