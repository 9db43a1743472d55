"""Hot per-pixel kernels with a numba path and a pure-numpy fallback.

The numba versions are used when numba imports and the environment
variable ``SCDEPTH_DISABLE_NUMBA`` is not set to a truthy value. The
sampling and window kernels perform the same floating point operations
in the same order on both paths; the segment kernel agrees to rounding.
Within one path every kernel is deterministic. Each
kernel is also exported under an explicit ``*_numpy`` / ``*_numba`` name
for equivalence tests and the benchmark.
"""

import os

import numpy as np

_FLAG = os.environ.get("SCDEPTH_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAS_NUMBA = numba is not None
USE_NUMBA = HAS_NUMBA and _FLAG not in ("1", "true", "yes", "on")
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# bilinear sampling


def bilinear_sample_numpy(img, u, v, mask):
    """Sample ``img`` (C, H, W) at continuous (u, v), returning values and
    their derivatives with respect to u and v.

    The cell index is clamped to [0, W-2] x [0, H-2] so sampling just
    outside the image extrapolates linearly from the border cell. Entries
    where ``mask`` is False are zero.
    """
    C, H, W = img.shape
    out = np.zeros((C,) + u.shape)
    du = np.zeros_like(out)
    dv = np.zeros_like(out)
    ii, jj = np.nonzero(mask)
    if ii.size == 0:
        return out, du, dv
    x = u[ii, jj]
    y = v[ii, jj]
    x0 = np.clip(np.floor(x).astype(np.int64), 0, W - 2)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, H - 2)
    ax = x - x0
    ay = y - y0
    a = img[:, y0, x0]
    b = img[:, y0, x0 + 1]
    c = img[:, y0 + 1, x0]
    d = img[:, y0 + 1, x0 + 1]
    top = a + ax * (b - a)
    bot = c + ax * (d - c)
    out[:, ii, jj] = top + ay * (bot - top)
    du[:, ii, jj] = (b - a) + ay * ((d - c) - (b - a))
    dv[:, ii, jj] = bot - top
    return out, du, dv


def box3_mean_numpy(x):
    """Mean over every fully-inside 3x3 window: (C, H, W) -> (C, H-2, W-2)."""
    C, H, W = x.shape
    acc = np.zeros((C, H - 2, W - 2))
    for di in range(3):
        for dj in range(3):
            acc += x[:, di:di + H - 2, dj:dj + W - 2]
    return acc / 9.0


def box3_adjoint_numpy(c):
    """Adjoint of :func:`box3_mean_numpy`: (C, H-2, W-2) -> (C, H, W)."""
    C, h, w = c.shape
    out = np.zeros((C, h + 2, w + 2))
    for di in range(3):
        for dj in range(3):
            out[:, di:di + h, dj:dj + w] += c
    return out / 9.0


def _rigid_inv_batch(m):
    out = np.zeros_like(m)
    rt = np.swapaxes(m[:, :3, :3], 1, 2)
    out[:, :3, :3] = rt
    out[:, :3, 3] = -np.einsum("nij,nj->ni", rt, m[:, :3, 3])
    out[:, 3, 3] = 1.0
    return out


def segment_errors_numpy(gt, pred, dist, lengths):
    """All-start odometry segment errors.

    For every start frame and every length ``l`` the segment ends at the
    first frame whose path distance reaches ``dist[first] + l`` (relative
    slack 1e-9 for accumulated rounding). Returns arrays (first, length,
    translation error, rotation angle in radians) ordered by start frame,
    then by length.
    """
    n = gt.shape[0]
    firsts, lens, terr, rerr = [], [], [], []
    starts = np.arange(n)
    for l in lengths:
        last = np.searchsorted(dist, dist + l - 1e-9 * l, side="left")
        ok = last < n
        f, e = starts[ok], last[ok]
        if f.size == 0:
            continue
        d_gt = _rigid_inv_batch(gt[f]) @ gt[e]
        d_pr = _rigid_inv_batch(pred[f]) @ pred[e]
        err = _rigid_inv_batch(d_pr) @ d_gt
        s = 0.5 * np.sqrt((err[:, 2, 1] - err[:, 1, 2]) ** 2
                          + (err[:, 0, 2] - err[:, 2, 0]) ** 2
                          + (err[:, 1, 0] - err[:, 0, 1]) ** 2)
        c = 0.5 * (err[:, 0, 0] + err[:, 1, 1] + err[:, 2, 2] - 1.0)
        firsts.append(f)
        lens.append(np.full(f.size, float(l)))
        terr.append(np.linalg.norm(err[:, :3, 3], axis=1))
        rerr.append(np.arctan2(s, c))
    if not firsts:
        empty = np.zeros(0)
        return np.zeros(0, dtype=np.int64), empty, empty.copy(), empty.copy()
    firsts = np.concatenate(firsts)
    order = np.argsort(firsts, kind="stable")
    return (firsts[order], np.concatenate(lens)[order],
            np.concatenate(terr)[order], np.concatenate(rerr)[order])


# ---------------------------------------------------------------------------
# numba twins

if HAS_NUMBA:

    @numba.njit(cache=True)
    def bilinear_sample_numba(img, u, v, mask):
        C, H, W = img.shape
        h, w = u.shape
        out = np.zeros((C, h, w))
        du = np.zeros((C, h, w))
        dv = np.zeros((C, h, w))
        for i in range(h):
            for j in range(w):
                if not mask[i, j]:
                    continue
                x = u[i, j]
                y = v[i, j]
                x0 = min(max(int(np.floor(x)), 0), W - 2)
                y0 = min(max(int(np.floor(y)), 0), H - 2)
                ax = x - x0
                ay = y - y0
                for ch in range(C):
                    a = img[ch, y0, x0]
                    b = img[ch, y0, x0 + 1]
                    c = img[ch, y0 + 1, x0]
                    d = img[ch, y0 + 1, x0 + 1]
                    top = a + ax * (b - a)
                    bot = c + ax * (d - c)
                    out[ch, i, j] = top + ay * (bot - top)
                    du[ch, i, j] = (b - a) + ay * ((d - c) - (b - a))
                    dv[ch, i, j] = bot - top
        return out, du, dv

    @numba.njit(cache=True)
    def box3_mean_numba(x):
        C, H, W = x.shape
        out = np.zeros((C, H - 2, W - 2))
        for ch in range(C):
            for i in range(H - 2):
                for j in range(W - 2):
                    acc = 0.0
                    for di in range(3):
                        for dj in range(3):
                            acc += x[ch, i + di, j + dj]
                    out[ch, i, j] = acc / 9.0
        return out

    @numba.njit(cache=True)
    def box3_adjoint_numba(c):
        C, h, w = c.shape
        out = np.zeros((C, h + 2, w + 2))
        for di in range(3):
            for dj in range(3):
                for ch in range(C):
                    for i in range(h):
                        for j in range(w):
                            out[ch, i + di, j + dj] += c[ch, i, j]
        return out / 9.0

    @numba.njit(cache=True)
    def _rigid_inv(m):
        out = np.zeros((4, 4))
        for i in range(3):
            for j in range(3):
                out[i, j] = m[j, i]
        for i in range(3):
            acc = 0.0
            for k in range(3):
                acc += m[k, i] * m[k, 3]
            out[i, 3] = -acc
        out[3, 3] = 1.0
        return out

    @numba.njit(cache=True)
    def _mm4(a, b):
        out = np.zeros((4, 4))
        for i in range(4):
            for j in range(4):
                acc = 0.0
                for k in range(4):
                    acc += a[i, k] * b[k, j]
                out[i, j] = acc
        return out

    @numba.njit(cache=True)
    def segment_errors_numba(gt, pred, dist, lengths):
        n = gt.shape[0]
        cap = n * lengths.shape[0]
        firsts = np.empty(cap, dtype=np.int64)
        lens = np.empty(cap)
        terr = np.empty(cap)
        rerr = np.empty(cap)
        k = 0
        for first in range(n):
            for li in range(lengths.shape[0]):
                l = lengths[li]
                target = dist[first] + l - 1e-9 * l
                last = np.searchsorted(dist, target)
                if last >= n:
                    continue
                d_gt = _mm4(_rigid_inv(gt[first]), gt[last])
                d_pr = _mm4(_rigid_inv(pred[first]), pred[last])
                err = _mm4(_rigid_inv(d_pr), d_gt)
                firsts[k] = first
                lens[k] = l
                terr[k] = np.sqrt(err[0, 3] ** 2 + err[1, 3] ** 2 + err[2, 3] ** 2)
                s = 0.5 * np.sqrt((err[2, 1] - err[1, 2]) ** 2
                                  + (err[0, 2] - err[2, 0]) ** 2
                                  + (err[1, 0] - err[0, 1]) ** 2)
                c = 0.5 * (err[0, 0] + err[1, 1] + err[2, 2] - 1.0)
                rerr[k] = np.arctan2(s, c)
                k += 1
        return firsts[:k], lens[:k], terr[:k], rerr[:k]

else:  # pragma: no cover
    bilinear_sample_numba = bilinear_sample_numpy
    box3_mean_numba = box3_mean_numpy
    box3_adjoint_numba = box3_adjoint_numpy
    segment_errors_numba = segment_errors_numpy


if USE_NUMBA:
    bilinear_sample = bilinear_sample_numba
    box3_mean = box3_mean_numba
    box3_adjoint = box3_adjoint_numba
    segment_errors = segment_errors_numba
else:
    bilinear_sample = bilinear_sample_numpy
    box3_mean = box3_mean_numpy
    box3_adjoint = box3_adjoint_numpy
    segment_errors = segment_errors_numpy
