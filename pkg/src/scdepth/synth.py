"""Analytic ray-cast scenes with ground-truth depth, pose, occlusion and motion masks.

A scene is a set of textured planes (optionally bounded rectangles) plus
an optional fronto-parallel textured rectangle that translates every
frame. Textures are smooth sums of sinusoids in plane-local coordinates,
so bilinear resampling of the rendered images is accurate to second order.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidSceneError
from .geometry import EPS_DEPTH, Intrinsics, PoseSE3, compose, exp_so3, log_pose
from .losses import LossWeights, total_loss


@dataclass(frozen=True)
class Texture:
    id: int = 0
    albedo: tuple = (0.2, 0.8)
    wavelength: float = 2.0
    components: int = 4

    def to_dict(self):
        return {"id": self.id, "albedo": list(self.albedo), "wavelength": self.wavelength,
                "components": self.components}

    @classmethod
    def from_dict(cls, d):
        d = d or {}
        return cls(id=int(d.get("id", 0)), albedo=tuple(float(x) for x in d.get("albedo", (0.2, 0.8))),
                   wavelength=float(d.get("wavelength", 2.0)),
                   components=int(d.get("components", 4)))


@dataclass(frozen=True, eq=False)
class Plane:
    """Plane ``normal . X = offset`` in world coordinates.

    ``center`` anchors the texture (projected onto the plane); with
    ``half_extent`` the plane is a rectangle of that half size along the
    in-plane axes ``axis`` and ``normal x axis``.
    """

    normal: np.ndarray
    offset: float
    texture: Texture = field(default_factory=Texture)
    center: np.ndarray = None
    half_extent: tuple = None
    axis: np.ndarray = None

    def frame(self):
        n = np.asarray(self.normal, dtype=float)
        n = n / np.linalg.norm(n)
        origin = n * self.offset
        if self.center is not None:
            c = np.asarray(self.center, dtype=float)
            origin = c - n * (n @ c - self.offset)
        helper = np.asarray(self.axis, dtype=float) if self.axis is not None else (
            np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0]))
        e1 = helper - n * (n @ helper)
        e1 /= np.linalg.norm(e1)
        e2 = np.cross(n, e1)
        return n, origin, e1, e2

    def to_dict(self):
        return {"normal": list(map(float, self.normal)), "offset": float(self.offset),
                "texture": self.texture.to_dict(),
                "center": None if self.center is None else list(map(float, self.center)),
                "half_extent": None if self.half_extent is None else list(map(float, self.half_extent)),
                "axis": None if self.axis is None else list(map(float, self.axis))}

    @classmethod
    def from_dict(cls, d):
        return cls(normal=np.asarray(d["normal"], dtype=float), offset=float(d["offset"]),
                   texture=Texture.from_dict(d.get("texture")),
                   center=None if d.get("center") is None else np.asarray(d["center"], dtype=float),
                   half_extent=None if d.get("half_extent") is None else tuple(d["half_extent"]),
                   axis=None if d.get("axis") is None else np.asarray(d["axis"], dtype=float))


@dataclass(frozen=True, eq=False)
class MovingBox:
    """Fronto-parallel textured rectangle whose center moves by ``velocity`` per frame."""

    center: np.ndarray
    half_extent: tuple
    velocity: np.ndarray
    texture: Texture = field(default_factory=lambda: Texture(id=7, albedo=(0.6, 0.95)))

    def plane_at(self, k):
        c = np.asarray(self.center, dtype=float) + k * np.asarray(self.velocity, dtype=float)
        return Plane(normal=np.array([0.0, 0.0, 1.0]), offset=float(c[2]), texture=self.texture,
                     center=c, half_extent=tuple(self.half_extent), axis=np.array([1.0, 0.0, 0.0]))

    def to_dict(self):
        return {"center": list(map(float, self.center)),
                "half_extent": list(map(float, self.half_extent)),
                "velocity": list(map(float, self.velocity)), "texture": self.texture.to_dict()}

    @classmethod
    def from_dict(cls, d):
        return cls(center=np.asarray(d["center"], dtype=float), half_extent=tuple(d["half_extent"]),
                   velocity=np.asarray(d["velocity"], dtype=float),
                   texture=Texture.from_dict(d.get("texture", {"id": 7, "albedo": [0.6, 0.95]})))


def _pose_from_dict(d):
    R = exp_so3(d.get("rotvec", [0.0, 0.0, 0.0]))
    return PoseSE3(R, d.get("translation", [0.0, 0.0, 0.0]))


def _pose_to_dict(P):
    return {"rotvec": list(map(float, log_pose(P).omega)),
            "translation": list(map(float, P.translation))}


@dataclass(eq=False)
class SceneSpec:
    """Scene description; ``camera_path`` holds world-to-camera poses."""

    intrinsics: Intrinsics
    planes: list
    camera_path: list
    moving_box: MovingBox = None
    channels: int = 3
    seed: int = 0

    @property
    def width(self):
        return self.intrinsics.width

    @property
    def height(self):
        return self.intrinsics.height

    def to_dict(self):
        K = self.intrinsics
        return {"width": K.width, "height": K.height, "channels": self.channels, "seed": self.seed,
                "intrinsics": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy},
                "planes": [p.to_dict() for p in self.planes],
                "moving_box": None if self.moving_box is None else self.moving_box.to_dict(),
                "camera_path": [_pose_to_dict(P) for P in self.camera_path]}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d):
        try:
            W, H = int(d["width"]), int(d["height"])
            kd = d.get("intrinsics") or {}
            K = Intrinsics(fx=float(kd.get("fx", 0.8 * W)), fy=float(kd.get("fy", 0.8 * W)),
                           cx=float(kd.get("cx", (W - 1) / 2)), cy=float(kd.get("cy", (H - 1) / 2)),
                           width=W, height=H)
            planes = [Plane.from_dict(p) for p in d["planes"]]
            if "camera_path" in d:
                path = [_pose_from_dict(p) for p in d["camera_path"]]
            else:
                m = d["camera_motion"]
                start = _pose_from_dict(m.get("start", {}))
                step = _pose_from_dict({"rotvec": m.get("step_rotvec", [0, 0, 0]),
                                        "translation": m.get("step_translation", [0, 0, 0])})
                path = camera_path_from_motion(start, step, int(m["frames"]))
            box = d.get("moving_box")
            channels = int(d.get("channels", 3))
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidSceneError(f"invalid scene: malformed spec ({exc})") from exc
        if channels not in (1, 3):
            raise InvalidSceneError("invalid scene: channels must be 1 or 3")
        if not planes or not path:
            raise InvalidSceneError("invalid scene: need at least one plane and one camera")
        return cls(intrinsics=K, planes=planes, camera_path=path,
                   moving_box=None if box is None else MovingBox.from_dict(box),
                   channels=channels, seed=int(d.get("seed", 0)))

    @classmethod
    def from_json(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidSceneError(f"invalid scene: not JSON ({exc})") from exc
        return cls.from_dict(d)


def camera_path_from_motion(start, step, frames):
    """World-to-camera path of a camera that moves by ``step`` (pose of the
    next camera expressed in the current one) every frame."""
    path = [start]
    inv_step = step.inverse()
    for _ in range(frames - 1):
        path.append(compose(path[-1], inv_step))
    return path


@dataclass(eq=False)
class RenderedFrame:
    image: np.ndarray
    depth: np.ndarray
    gt_pose: PoseSE3
    occlusion_mask: np.ndarray
    dynamic_mask: np.ndarray


# ---------------------------------------------------------------------------
# rendering


def _texture_params(seed, surface, tex, channels):
    rng = np.random.default_rng([int(seed), int(surface), int(tex.id)])
    k = tex.components
    phi = rng.uniform(0.0, np.pi, k)
    lam = rng.uniform(tex.wavelength, 2.0 * tex.wavelength, k)
    phase = rng.uniform(0.0, 2.0 * np.pi, (channels, k))
    return np.cos(phi), np.sin(phi), lam, phase


def shade(params, tex, a, b):
    """Texture intensities (C, ...) at plane-local coordinates (a, b)."""
    cphi, sphi, lam, phase = params
    arg = 2.0 * np.pi * (a[..., None] * cphi + b[..., None] * sphi) / lam
    out = []
    for c in range(phase.shape[0]):
        out.append(0.5 + 0.5 * np.mean(np.sin(arg + phase[c]), axis=-1))
    lo, hi = tex.albedo
    return lo + (hi - lo) * np.stack(out)


def _surfaces_at(spec, k):
    surfaces = list(spec.planes)
    if spec.moving_box is not None:
        surfaces.append(spec.moving_box.plane_at(k))
    return surfaces


def cast_rays(surfaces, origin, dirs):
    """Nearest intersection along ``origin + lam * dirs``.

    Returns ``(lam, surface_index, a, b)``; ``surface_index`` is -1 and
    ``lam`` is inf where nothing is hit.
    """
    shape = dirs.shape[:-1]
    best = np.full(shape, np.inf)
    idx = np.full(shape, -1, dtype=np.int64)
    la = np.zeros(shape)
    lb = np.zeros(shape)
    for s, pl in enumerate(surfaces):
        n, o, e1, e2 = pl.frame()
        den = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (pl.offset - n @ origin) / den
        ok = np.isfinite(lam) & (lam > EPS_DEPTH)
        X = origin + lam[..., None] * dirs
        a = (X - o) @ e1
        b = (X - o) @ e2
        if pl.half_extent is not None:
            ok &= (np.abs(a) <= pl.half_extent[0]) & (np.abs(b) <= pl.half_extent[1])
        take = ok & (lam < best)
        best = np.where(take, lam, best)
        idx = np.where(take, s, idx)
        la = np.where(take, a, la)
        lb = np.where(take, b, lb)
    return best, idx, la, lb


def _camera_rays(K, P, u=None, v=None):
    if u is None:
        rays_c = K.rays()
    else:
        rays_c = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    origin = -P.rotation.T @ P.translation
    return origin, rays_c @ P.rotation


def render(spec):
    """Render every camera of ``spec``; see :class:`RenderedFrame`."""
    K = spec.intrinsics
    H, W = K.height, K.width
    frames = []
    n = len(spec.camera_path)
    hits = []
    for k, P in enumerate(spec.camera_path):
        surfaces = _surfaces_at(spec, k)
        origin, dirs = _camera_rays(K, P)
        lam, idx, a, b = cast_rays(surfaces, origin, dirs)
        if np.any(idx < 0):
            raise InvalidSceneError(
                f"invalid scene: {int(np.sum(idx < 0))} pixels of frame {k} hit no surface")
        img = np.zeros((spec.channels, H, W))
        for s, pl in enumerate(surfaces):
            sel = idx == s
            if sel.any():
                params = _texture_params(spec.seed, s, pl.texture, spec.channels)
                img[:, sel] = shade(params, pl.texture, a[sel], b[sel])
        dyn = (idx == len(spec.planes)) if spec.moving_box is not None else np.zeros((H, W), bool)
        hits.append((origin + lam[..., None] * dirs, dyn))
        frames.append(RenderedFrame(image=np.clip(img, 0.0, 1.0), depth=lam, gt_pose=P,
                                    occlusion_mask=np.zeros((H, W), bool), dynamic_mask=dyn))
    for k in range(n - 1):
        X, dyn = hits[k]
        if spec.moving_box is not None:
            X = X + dyn[..., None] * np.asarray(spec.moving_box.velocity, dtype=float)
        frames[k].occlusion_mask = _occluded(spec, k + 1, X)
    return frames


def _occluded(spec, k, X):
    K = spec.intrinsics
    P = spec.camera_path[k]
    Y = P.apply(X)
    z = Y[..., 2]
    front = z > EPS_DEPTH
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(front, K.fx * Y[..., 0] / z + K.cx, -1.0)
        v = np.where(front, K.fy * Y[..., 1] / z + K.cy, -1.0)
    inside = front & (u >= 0) & (u <= K.width - 1) & (v >= 0) & (v <= K.height - 1)
    origin, dirs = _camera_rays(K, P, u, v)
    lam, _, _, _ = cast_rays(_surfaces_at(spec, k), origin, dirs)
    return inside & (lam < z * (1.0 - 1e-7))


def relative_pose(frames, a, b):
    """``P_ab`` between two rendered frames from their world-to-camera poses."""
    return compose(frames[a].gt_pose.inverse(), frames[b].gt_pose)


def perfect_loss_check(frames, K, w=None, index=0, bidirectional=False):
    """Objective of the pair ``(index, index + 1)`` at ground-truth depth and pose."""
    a, b = frames[index], frames[index + 1]
    return total_loss(a.image, b.image, a.depth, b.depth, relative_pose(frames, index, index + 1),
                      K, w or LossWeights(), bidirectional=bidirectional)


# ---------------------------------------------------------------------------
# ready-made scenes


def default_intrinsics(size):
    H, W = size
    return Intrinsics(fx=0.8 * W, fy=0.8 * W, cx=(W - 1) / 2, cy=(H - 1) / 2, width=W, height=H)


def static_scene(seed, size=(128, 128), frames=2):
    """Random occlusion-free single-plane scene with a small random camera motion."""
    rng = np.random.default_rng(seed)
    K = default_intrinsics(size)
    depth = rng.uniform(4.0, 8.0)
    tilt = rng.uniform(-0.35, 0.35, 2)
    normal = np.array([tilt[0], tilt[1], 1.0])
    normal /= np.linalg.norm(normal)
    plane = Plane(normal=normal, offset=float(normal[2] * depth),
                  texture=Texture(id=int(rng.integers(0, 1000)), albedo=(0.15, 0.85),
                                  wavelength=0.4 * depth))
    step = PoseSE3(exp_so3(rng.uniform(-0.02, 0.02, 3)), rng.uniform(-0.2, 0.2, 3) * depth / 5.0)
    path = camera_path_from_motion(PoseSE3.identity(), step, frames)
    return SceneSpec(intrinsics=K, planes=[plane], camera_path=path, seed=seed)


def fronto_parallel_scene(seed=0, size=(64, 64), depth=5.0, step=None, frames=2, wavelength=2.0):
    K = default_intrinsics(size)
    plane = Plane(normal=np.array([0.0, 0.0, 1.0]), offset=depth,
                  texture=Texture(id=1, albedo=(0.1, 0.9), wavelength=wavelength, components=5))
    if step is None:
        step = PoseSE3(exp_so3([0.01, -0.02, 0.005]), [0.3, -0.1, 0.2])
    return SceneSpec(intrinsics=K, planes=[plane],
                     camera_path=camera_path_from_motion(PoseSE3.identity(), step, frames), seed=seed)


def integer_shift_scene(size=(32, 32), depth=4.0, shift_px=1):
    """Fronto-parallel plane with a sideways camera step that moves every pixel
    by exactly ``shift_px`` columns, so the warp at ground truth is exact."""
    K = default_intrinsics(size)
    step = PoseSE3(np.eye(3), [shift_px * depth / K.fx, 0.0, 0.0])
    plane = Plane(normal=np.array([0.0, 0.0, 1.0]), offset=depth,
                  texture=Texture(id=3, albedo=(0.1, 0.9), wavelength=1.5))
    return SceneSpec(intrinsics=K, planes=[plane],
                     camera_path=camera_path_from_motion(PoseSE3.identity(), step, 2), seed=0)


def occlusion_scene(seed=0, size=(96, 96)):
    """Camera sliding +x behind the edge of a foreground rectangle."""
    K = default_intrinsics(size)
    back = Plane(normal=np.array([0.0, 0.0, 1.0]), offset=12.0,
                 texture=Texture(id=11, albedo=(0.05, 0.45), wavelength=3.0))
    fore = Plane(normal=np.array([0.0, 0.0, 1.0]), offset=4.0,
                 texture=Texture(id=12, albedo=(0.55, 0.95), wavelength=1.0),
                 center=np.array([2.5, 0.0, 4.0]), half_extent=(2.5, 20.0))
    step = PoseSE3(np.eye(3), [0.6, 0.0, 0.0])
    return SceneSpec(intrinsics=K, planes=[back, fore],
                     camera_path=camera_path_from_motion(PoseSE3.identity(), step, 2), seed=seed)


def moving_box_scene(seed=0, size=(96, 96)):
    """Static background with a near rectangle moving opposite to the camera."""
    K = default_intrinsics(size)
    back = Plane(normal=np.array([0.0, 0.0, 1.0]), offset=10.0,
                 texture=Texture(id=21, albedo=(0.1, 0.6), wavelength=2.5))
    box = MovingBox(center=np.array([0.0, 0.0, 3.0]), half_extent=(0.45, 0.45),
                    velocity=np.array([-1.2, 0.0, 0.0]),
                    texture=Texture(id=22, albedo=(0.5, 0.95), wavelength=0.6))
    step = PoseSE3(np.eye(3), [0.3, 0.0, 0.0])
    return SceneSpec(intrinsics=K, planes=[back], moving_box=box,
                     camera_path=camera_path_from_motion(PoseSE3.identity(), step, 2), seed=seed)
