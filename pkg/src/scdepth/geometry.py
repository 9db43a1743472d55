"""Pinhole camera, rigid poses and the depth-driven warp between two frames.

Conventions used throughout the package:

* ``P_ab`` maps points in camera-a coordinates to camera-b coordinates,
  ``X_b = R @ X_a + t``.
* Pixel ``(u, v)`` sits at continuous coordinate ``(u, v)``; ``u`` is the
  column, ``v`` the row.
* A projection is valid when it lands in ``[0, W-1] x [0, H-1]`` with depth
  above :data:`EPS_DEPTH`.
"""

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (BehindCameraError, DimensionError,
                     IllConditionedLogError, InvalidDepthError, ScdepthError)

EPS_DEPTH = 1e-6
_ORTHO_TOL = 1e-9
GRID_SNAP = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ScdepthError(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ScdepthError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image")

    @property
    def shape(self):
        return (self.height, self.width)

    def matrix(self):
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def rays(self):
        """Unit-depth back-projection ``K^-1 [u, v, 1]`` of every pixel, (H, W, 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy,
                         np.ones_like(u)], axis=-1)

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["fx"]), float(d["fy"]), float(d["cx"]), float(d["cy"]),
                   int(d["width"]), int(d["height"]))


def hat(w):
    """Skew-symmetric matrix with ``hat(w) @ x == cross(w, x)``."""
    return np.array([[0.0, -w[2], w[1]],
                     [w[2], 0.0, -w[0]],
                     [-w[1], w[0], 0.0]])


def rotation_angle(R):
    """Geodesic angle of a rotation matrix, stable near 0 and pi."""
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


@dataclass(frozen=True, eq=False)
class PoseSE3:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float).reshape(3, 3)
        t = np.array(self.translation, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > _ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ScdepthError("rotation is not a proper orthonormal matrix")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def _unchecked(cls, R, t):
        # composition results drift from orthonormality by rounding only
        obj = object.__new__(cls)
        R = np.asarray(R, dtype=float)
        t = np.asarray(t, dtype=float)
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(obj, "rotation", R)
        object.__setattr__(obj, "translation", t)
        return obj

    @classmethod
    def identity(cls):
        return cls._unchecked(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, check=True):
        m = np.asarray(m, dtype=float)
        if m.shape not in ((4, 4), (3, 4)):
            raise DimensionError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        if check:
            return cls(m[:3, :3], m[:3, 3])
        return cls._unchecked(m[:3, :3].copy(), m[:3, 3].copy())

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self):
        rt = self.rotation.T
        return PoseSE3._unchecked(rt.copy(), -rt @ self.translation)

    def apply(self, points):
        """Transform points of shape (..., 3)."""
        return np.asarray(points) @ self.rotation.T + self.translation

    def allclose(self, other, atol=1e-9):
        return (np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
                and np.allclose(self.translation, other.translation, atol=atol, rtol=0))

    def __repr__(self):
        return (f"PoseSE3(angle={np.degrees(rotation_angle(self.rotation)):.6g} deg, "
                f"t={np.array2string(self.translation, precision=6)})")


@dataclass(frozen=True, eq=False)
class Twist:
    omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    v: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "omega", np.array(self.omega, dtype=float).reshape(3))
        object.__setattr__(self, "v", np.array(self.v, dtype=float).reshape(3))

    def as_vector(self):
        """Six-vector ``[omega, v]``; gradients use the same ordering."""
        return np.concatenate([self.omega, self.v])

    @classmethod
    def from_vector(cls, x):
        x = np.asarray(x, dtype=float)
        return cls(x[:3], x[3:6])


def _so3_coeffs(theta):
    # A = sin/th, B = (1-cos)/th^2, C = (th-sin)/th^3
    if theta < 1e-4:
        t2 = theta * theta
        return (1.0 - t2 / 6.0 + t2 * t2 / 120.0,
                0.5 - t2 / 24.0 + t2 * t2 / 720.0,
                1.0 / 6.0 - t2 / 120.0 + t2 * t2 / 5040.0)
    s, c = np.sin(theta), np.cos(theta)
    return s / theta, (1.0 - c) / theta ** 2, (theta - s) / theta ** 3


def exp_so3(omega):
    omega = np.asarray(omega, dtype=float)
    A, B, _ = _so3_coeffs(float(np.linalg.norm(omega)))
    W = hat(omega)
    return np.eye(3) + A * W + B * (W @ W)


def exp_twist(t):
    """SE(3) exponential of a :class:`Twist` (or a 6-vector ``[omega, v]``)."""
    if not isinstance(t, Twist):
        t = Twist.from_vector(t)
    theta = float(np.linalg.norm(t.omega))
    A, B, C = _so3_coeffs(theta)
    W = hat(t.omega)
    W2 = W @ W
    R = np.eye(3) + A * W + B * W2
    V = np.eye(3) + B * W + C * W2
    return PoseSE3._unchecked(R, V @ t.v)


def log_pose(P):
    """Inverse of :func:`exp_twist` for rotation angles below pi - 1e-6."""
    R = P.rotation
    theta = rotation_angle(R)
    if theta > np.pi - 1e-6:
        raise IllConditionedLogError(f"rotation angle {theta} too close to pi for a stable log")
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-4:
        t2 = theta * theta
        omega = 0.5 * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0) * vee
        D = 1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    else:
        omega = theta / (2.0 * np.sin(theta)) * vee
        A, B, _ = _so3_coeffs(theta)
        D = (1.0 - A / (2.0 * B)) / theta ** 2
    W = hat(omega)
    V_inv = np.eye(3) - 0.5 * W + D * (W @ W)
    return Twist(omega, V_inv @ P.translation)


def compose(P_ab, P_bc):
    """Transform from frame a to frame c: apply ``P_ab`` first, then ``P_bc``."""
    R = P_bc.rotation @ P_ab.rotation
    t = P_bc.rotation @ P_ab.translation + P_bc.translation
    return PoseSE3._unchecked(R, t)


def lift(p, d, K):
    """Back-project pixel ``p = (u, v)`` at depth ``d`` to a camera-frame point."""
    d = np.asarray(d, dtype=float)
    if np.any(~(d > 0)):
        raise InvalidDepthError("depth must be positive")
    p = np.asarray(p, dtype=float)
    x = (p[..., 0] - K.cx) / K.fx
    y = (p[..., 1] - K.cy) / K.fy
    return np.stack([x * d, y * d, d * np.ones_like(x)], axis=-1)


def project(X, K):
    """Project camera-frame points; returns ``(pixel, depth)``.

    The pixel may fall outside the image; validity is up to the caller.
    """
    X = np.asarray(X, dtype=float)
    z = X[..., 2]
    if np.any(~(z > EPS_DEPTH)):
        raise BehindCameraError("point at or behind the camera plane")
    uv = np.stack([K.fx * X[..., 0] / z + K.cx, K.fy * X[..., 1] / z + K.cy], axis=-1)
    return uv, z


# ---------------------------------------------------------------------------
# dense grids


@dataclass(frozen=True, eq=False)
class DepthMap:
    values: np.ndarray

    def __post_init__(self):
        d = np.array(self.values, dtype=float)
        if d.ndim != 2:
            raise DimensionError(f"depth map must be 2-D, got shape {d.shape}")
        if not np.all(np.isfinite(d)):
            raise InvalidDepthError("depth map contains non-finite values")
        object.__setattr__(self, "values", np.maximum(d, EPS_DEPTH))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class Image:
    channels: np.ndarray

    def __post_init__(self):
        c = np.array(self.channels, dtype=float)
        if c.ndim == 2:
            c = c[None]
        if c.ndim != 3 or c.shape[0] not in (1, 3):
            raise DimensionError(f"image must be HxW or Cx HxW with C in (1, 3), got {c.shape}")
        if not (np.all(c >= 0.0) and np.all(c <= 1.0)):
            raise ScdepthError("image intensities must lie in [0, 1]")
        object.__setattr__(self, "channels", c)

    @property
    def shape(self):
        return self.channels.shape[1:]


def as_image(x):
    """(C, H, W) float array from an :class:`Image` or array-like."""
    if isinstance(x, Image):
        return x.channels
    a = np.asarray(x, dtype=float)
    if a.ndim == 2:
        a = a[None]
    if a.ndim != 3:
        raise DimensionError(f"image must be 2-D or 3-D, got shape {a.shape}")
    return a


def as_depth(x):
    """(H, W) float array with the depth floor applied."""
    if isinstance(x, DepthMap):
        return x.values
    a = np.asarray(x, dtype=float)
    if a.ndim != 2:
        raise DimensionError(f"depth map must be 2-D, got shape {a.shape}")
    return np.maximum(a, EPS_DEPTH)


@dataclass(eq=False)
class WarpResult:
    """Frame-b quantities resampled onto the pixel grid of frame a.

    ``image``, ``proj_depth`` and ``interp_depth`` are NaN outside ``valid``.
    The remaining fields are what the analytic gradients need.
    """

    image: np.ndarray
    proj_depth: np.ndarray
    interp_depth: np.ndarray
    valid: np.ndarray
    u: np.ndarray
    v: np.ndarray
    points: np.ndarray
    rays: np.ndarray
    image_du: np.ndarray
    image_dv: np.ndarray
    depth_du: np.ndarray
    depth_dv: np.ndarray

    @property
    def valid_count(self):
        return int(self.valid.sum())


def check_grids(I_b, D_a, D_b, K, I_a=None):
    H, W = K.height, K.width
    for name, shape in (("I_b", I_b.shape[1:]), ("D_a", D_a.shape), ("D_b", D_b.shape)):
        if tuple(shape) != (H, W):
            raise DimensionError(f"{name} has shape {tuple(shape)}, expected {(H, W)}")
    if I_a is not None and I_a.shape != I_b.shape:
        raise DimensionError(f"I_a has shape {I_a.shape}, I_b has {I_b.shape}")
    if H < 3 or W < 3:
        raise DimensionError("images must be at least 3x3")


def warp_pair(I_b, D_a, D_b, P_ab, K, valid=None):
    """Resample frame b onto frame a through ``D_a`` and ``P_ab``.

    Every pixel of frame a is lifted with ``D_a``, moved by ``P_ab`` and
    projected into frame b. Pixels landing inside frame b form the valid
    set, on which the synthesized image, the projected depth and the
    bilinearly interpolated ``D_b`` are reported.

    ``valid`` overrides the computed valid set (frozen-V evaluation for
    gradient checks); samples just outside the image then extrapolate
    from the border cell.
    """
    I_b = as_image(I_b)
    D_a = as_depth(D_a)
    D_b = as_depth(D_b)
    check_grids(I_b, D_a, D_b, K)
    H, W = K.height, K.width

    rays = K.rays()
    points = (rays * D_a[..., None]) @ P_ab.rotation.T + P_ab.translation
    z = points[..., 2]
    front = z > EPS_DEPTH
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, K.fx * points[..., 0] / z + K.cx, np.nan)
        v = np.where(front, K.fy * points[..., 1] / z + K.cy, np.nan)
    # absorb round-off so grid-aligned projections stay exact and in bounds
    for c in (u, v):
        r = np.round(c)
        snap = np.abs(c - r) < GRID_SNAP
        c[snap] = r[snap]
    if valid is None:
        valid = front & (u >= 0) & (u <= W - 1) & (v >= 0) & (v <= H - 1)
    else:
        valid = np.asarray(valid, dtype=bool)
        if valid.shape != (H, W):
            raise DimensionError("valid mask shape mismatch")
        if np.any(valid & ~front):
            raise BehindCameraError("frozen valid set contains points behind the camera")
    uu = np.where(valid, u, 0.0)
    vv = np.where(valid, v, 0.0)
    img, img_du, img_dv = _kernels.bilinear_sample(np.ascontiguousarray(I_b), uu, vv, valid)
    dep, dep_du, dep_dv = _kernels.bilinear_sample(np.ascontiguousarray(D_b[None]), uu, vv, valid)

    inval = ~valid
    img[:, inval] = np.nan
    proj = np.where(valid, z, np.nan)
    interp = dep[0]
    interp[inval] = np.nan
    return WarpResult(image=img, proj_depth=proj, interp_depth=interp, valid=valid,
                      u=u, v=v, points=points, rays=rays,
                      image_du=img_du, image_dv=img_dv,
                      depth_du=dep_du[0], depth_dv=dep_dv[0])
