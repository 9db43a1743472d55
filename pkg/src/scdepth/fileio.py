"""Readers and writers for every file the CLI touches.

* Images: binary 8-bit PGM (``P5``, one channel) or PPM (``P6``, RGB).
* Depth and float maps: PFM greyscale, ``Pf`` header, scale ``-1.0``
  (little-endian), rows stored bottom to top, float32.
* Poses: KITTI odometry text, one camera-to-world ``[R|t]`` per line as
  12 row-major floats.
* Intrinsics: JSON object with ``fx fy cx cy width height``.
"""

import csv
import io
import json
import os

import numpy as np

from .errors import DimensionError, ScdepthError
from .geometry import Intrinsics, PoseSE3


class FormatError(ScdepthError):
    pass


def _read_header_tokens(f, count):
    tokens = []
    while len(tokens) < count:
        line = f.readline()
        if not line:
            raise FormatError("truncated header")
        line = line.split(b"#", 1)[0]
        tokens.extend(line.split())
    return tokens


def write_pnm(path, img):
    """Write a (C, H, W) or (H, W) image in [0, 1] as 8-bit PGM/PPM."""
    a = np.asarray(img, dtype=float)
    if a.ndim == 3 and a.shape[0] == 1:
        a = a[0]
    if a.ndim == 2:
        magic, data = b"P5", a
    elif a.ndim == 3 and a.shape[0] == 3:
        magic, data = b"P6", np.moveaxis(a, 0, -1)
    else:
        raise DimensionError(f"cannot store image of shape {a.shape}")
    q = np.round(np.clip(data, 0.0, 1.0) * 255.0).astype(np.uint8)
    H, W = q.shape[:2]
    with open(path, "wb") as f:
        f.write(b"%s\n%d %d\n255\n" % (magic, W, H))
        f.write(q.tobytes())


def read_pnm(path):
    """Read a binary PGM/PPM into a (C, H, W) float array in [0, 1]."""
    with open(path, "rb") as f:
        magic, w, h, maxval = _read_header_tokens(f, 4)
        if magic not in (b"P5", b"P6"):
            raise FormatError(f"{path}: unsupported magic {magic!r}")
        W, H, mx = int(w), int(h), int(maxval)
        if mx != 255:
            raise FormatError(f"{path}: only 8-bit images are supported")
        C = 1 if magic == b"P5" else 3
        raw = f.read(W * H * C)
    if len(raw) != W * H * C:
        raise FormatError(f"{path}: truncated pixel data")
    a = np.frombuffer(raw, dtype=np.uint8).reshape(H, W, C).astype(float) / 255.0
    return np.ascontiguousarray(np.moveaxis(a, -1, 0))


def write_pfm(path, arr):
    a = np.asarray(arr, dtype=np.float32)
    if a.ndim != 2:
        raise DimensionError(f"PFM writer expects a 2-D map, got {a.shape}")
    H, W = a.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n%d %d\n-1.0\n" % (W, H))
        f.write(np.flipud(a).astype("<f4").tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        magic, w, h, scale = _read_header_tokens(f, 4)
        if magic != b"Pf":
            raise FormatError(f"{path}: only greyscale PFM ('Pf') is supported")
        W, H, s = int(w), int(h), float(scale)
        dtype = "<f4" if s < 0 else ">f4"
        raw = f.read(4 * W * H)
    if len(raw) != 4 * W * H:
        raise FormatError(f"{path}: truncated float data")
    a = np.frombuffer(raw, dtype=dtype).reshape(H, W)
    return np.flipud(a).astype(float)


def format_pose_line(P):
    m = P.matrix()[:3]
    return " ".join(repr(float(x)) for x in m.ravel())


def write_kitti_poses(path, poses):
    with open(path, "w") as f:
        for P in poses:
            f.write(format_pose_line(P) + "\n")


def read_kitti_poses(path):
    poses = []
    with open(path) as f:
        for n, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                vals = [float(x) for x in line.split()]
            except ValueError as exc:
                raise FormatError(f"{path}:{n}: {exc}") from exc
            if len(vals) != 12:
                raise FormatError(f"{path}:{n}: expected 12 values, got {len(vals)}")
            m = np.array(vals).reshape(3, 4)
            poses.append(PoseSE3.from_matrix(m, check=False))
    if not poses:
        raise FormatError(f"{path}: no poses")
    return poses


def write_intrinsics(path, K):
    with open(path, "w") as f:
        json.dump(K.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_intrinsics(path):
    with open(path) as f:
        try:
            return Intrinsics.from_dict(json.load(f))
        except (KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"{path}: bad intrinsics ({exc})") from exc


def write_csv(path, rows, columns):
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k])
                        for k in columns})


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def trajectory_svg(series, size=480, margin=24):
    """Top-down (x, z) polyline plot of named position arrays as an SVG string."""
    pts = np.concatenate([p[:, [0, 2]] for _, p, _ in series])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    span = max(float(np.max(hi - lo)), 1e-9)
    scale = (size - 2 * margin) / span

    def xy(p):
        x = margin + (p[:, 0] - lo[0]) * scale
        y = size - margin - (p[:, 2] - lo[1]) * scale
        return " ".join(f"{a:.2f},{b:.2f}" for a, b in zip(x, y))

    out = io.StringIO()
    out.write(f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
              f'viewBox="0 0 {size} {size}">\n')
    out.write(f'<rect width="{size}" height="{size}" fill="white"/>\n')
    for i, (name, p, color) in enumerate(series):
        out.write(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                  f'points="{xy(p)}"/>\n')
        out.write(f'<text x="{margin}" y="{14 + 14 * i}" font-size="12" fill="{color}">'
                  f'{name}</text>\n')
    out.write("</svg>\n")
    return out.getvalue()


def list_files(directory, suffix):
    if not os.path.isdir(directory):
        raise FormatError(f"{directory}: not a directory")
    return sorted(f for f in os.listdir(directory) if f.endswith(suffix))
