"""Pinhole stereo geometry, error metrics and the ray/heightfield oracle.

Camera frame: X right, Y down, Z forward along the optical axis (mm).
Image frame: u right (columns), v down (rows), pixel centres at integers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ContractError, MissingDepthError, NoIntersectionError, OutOfBoundsError

DISPARITY_EPS = 1e-6
INVALID_DEPTH = 0.0
MARCH_STEP_MM = 0.25
BISECTION_TOL_MM = 1e-6


class Point2D(NamedTuple):
    u: float
    v: float


class Point3D(NamedTuple):
    X: float
    Y: float
    Z: float


@dataclass(frozen=True)
class CameraRig:
    focal_px: float
    baseline_mm: float
    alpha: float
    beta: float
    principal_point: tuple[float, float]  # (o_x, o_y)
    image_size: tuple[int, int]  # (H, W)

    def __post_init__(self):
        object.__setattr__(self, "principal_point", tuple(float(c) for c in self.principal_point))
        object.__setattr__(self, "image_size", tuple(int(c) for c in self.image_size))
        for name in ("focal_px", "baseline_mm", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ContractError(f"{name} must be > 0, got {getattr(self, name)}")
        H, W = self.image_size
        ox, oy = self.principal_point
        if not (0 <= ox < W and 0 <= oy < H):
            raise ContractError(f"principal point {self.principal_point} outside image {W}x{H}")

    @property
    def ox(self):
        return self.principal_point[0]

    @property
    def oy(self):
        return self.principal_point[1]

    @classmethod
    def simple(cls, focal_px, baseline_mm, image_size):
        """Square pixels, principal point at the image centre."""
        H, W = image_size
        return cls(focal_px, baseline_mm, focal_px, focal_px, ((W - 1) / 2, (H - 1) / 2), (H, W))

    def to_dict(self):
        return {
            "focal_px": self.focal_px,
            "baseline_mm": self.baseline_mm,
            "alpha": self.alpha,
            "beta": self.beta,
            "principal_point": list(self.principal_point),
            "image_size": list(self.image_size),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def pixel_rays(self, rows=None, cols=None):
        """Unit ray directions through pixel centres, shape (H, W, 3)."""
        H, W = self.image_size
        v, u = np.meshgrid(
            np.arange(H, dtype=float) if rows is None else rows,
            np.arange(W, dtype=float) if cols is None else cols,
            indexing="ij",
        )
        d = np.stack([(u - self.ox) / self.alpha, (v - self.oy) / self.beta, np.ones_like(u)], axis=-1)
        return d / np.linalg.norm(d, axis=-1, keepdims=True)


def disparity_to_depth(disparity, rig: CameraRig):
    disparity = np.asarray(disparity, dtype=float)
    if disparity.shape != tuple(rig.image_size):
        raise ContractError(f"disparity shape {disparity.shape} != rig image size {rig.image_size}")
    depth = np.full(disparity.shape, INVALID_DEPTH)
    valid = disparity > DISPARITY_EPS
    depth[valid] = rig.focal_px * rig.baseline_mm / disparity[valid]
    return depth


def depth_at(p: Point2D, depth, rig: CameraRig):
    """Nearest-pixel depth lookup; raises if ``p`` is outside or the depth is invalid."""
    H, W = np.shape(depth)
    u, v = p
    if not (np.isfinite(u) and np.isfinite(v)):
        raise OutOfBoundsError(f"non-finite point {p}")
    col, row = int(round(u)), int(round(v))
    if not (0 <= col < W and 0 <= row < H):
        raise OutOfBoundsError(f"point ({u:.2f}, {v:.2f}) outside {W}x{H} image")
    z = float(depth[row, col])
    if not (np.isfinite(z) and z > 0):
        raise MissingDepthError(f"no valid depth at pixel ({col}, {row})")
    return z


def back_project(p: Point2D, depth, rig: CameraRig) -> Point3D:
    """Lift a pixel to camera coordinates. ``depth`` is a depth map or a scalar Z."""
    if np.ndim(depth) == 0:
        Z = float(depth)
        if not Z > 0:
            raise MissingDepthError(f"invalid depth {Z}")
    else:
        Z = depth_at(p, depth, rig)
    u, v = p
    return Point3D((u - rig.ox) * Z / rig.alpha, (v - rig.oy) * Z / rig.beta, Z)


def project(q: Point3D, rig: CameraRig) -> Point2D:
    X, Y, Z = q
    if not Z > 0:
        raise ContractError(f"cannot project point with Z={Z} <= 0")
    return Point2D(rig.alpha * X / Z + rig.ox, rig.beta * Y / Z + rig.oy)


def error_2d(pred, gt):
    return math.sqrt((pred[0] - gt[0]) ** 2 + (pred[1] - gt[1]) ** 2)


def error_3d(pred, gt):
    return math.sqrt((pred[0] - gt[0]) ** 2 + (pred[1] - gt[1]) ** 2 + (pred[2] - gt[2]) ** 2)


def _surface_gap(surface, origins, dirs, t):
    p = origins + t[..., None] * dirs
    return p[..., 2] - surface.height(p[..., 0], p[..., 1])


def intersect_rays(origins, dirs, surface, t_start, t_stop, step=MARCH_STEP_MM, tol=BISECTION_TOL_MM):
    """Vectorised first crossing of many rays with ``surface``.

    ``surface.height(x, y)`` must return NaN outside its domain. Rays are
    marched with a fixed step from ``t_start`` to ``t_stop`` and the first
    bracketed sign change of ``Z - height(X, Y)`` is refined by bisection.
    Returns ray parameters, NaN where no crossing was found.
    """
    origins = np.asarray(origins, dtype=float)
    dirs = np.asarray(dirs, dtype=float)
    n = dirs.shape[0]
    t_start = np.broadcast_to(np.asarray(t_start, dtype=float), (n,)).copy()
    t_stop = np.broadcast_to(np.asarray(t_stop, dtype=float), (n,))
    lo = np.full(n, np.nan)
    hi = np.full(n, np.nan)
    t_prev = t_start
    f_prev = _surface_gap(surface, origins, dirs, t_prev)
    active = np.isfinite(f_prev) & (t_start < t_stop)
    n_steps = int(np.ceil(np.nanmax(t_stop - t_start, initial=0.0) / step)) if n else 0
    idx = np.flatnonzero(active)
    for _ in range(n_steps):
        if idx.size == 0:
            break
        t_next = np.minimum(t_prev[idx] + step, t_stop[idx])
        f_next = _surface_gap(surface, origins[idx], dirs[idx], t_next)
        crossed = np.isfinite(f_next) & (np.sign(f_next) != np.sign(f_prev[idx]))
        hit = idx[crossed]
        lo[hit] = t_prev[hit]
        hi[hit] = t_next[crossed]
        t_prev[idx] = t_next
        f_prev[idx] = f_next
        keep = ~crossed & np.isfinite(f_next) & (t_next < t_stop[idx])
        idx = idx[keep]

    found = np.flatnonzero(np.isfinite(lo))
    t = np.full(n, np.nan)
    if found.size == 0:
        return t
    o, d = origins[found], dirs[found]
    a, b = lo[found], hi[found]
    fa = _surface_gap(surface, o, d, a)
    mid = 0.5 * (a + b)
    for _ in range(200):
        mid = 0.5 * (a + b)
        fm = _surface_gap(surface, o, d, mid)
        if np.all(np.abs(fm) < tol):
            break
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, mid, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, mid)
    t[found] = mid
    return t


def ray_surface_intersection(origin, direction, surface, step=MARCH_STEP_MM):
    """First intersection of the ray ``origin + t*direction`` (t >= 0) with a heightfield."""
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if not abs(np.linalg.norm(direction) - 1.0) < 1e-9:
        raise ContractError("direction must be a unit vector")
    t_stop = surface.max_ray_length(origin, direction)
    t = intersect_rays(origin[None], direction[None], surface, 0.0, t_stop, step=step)[0]
    if not np.isfinite(t):
        raise NoIntersectionError(f"ray from {origin.tolist()} along {direction.tolist()} misses the surface")
    return Point3D(*(origin + t * direction))
