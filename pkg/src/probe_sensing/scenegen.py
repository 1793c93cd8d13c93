"""Synthetic stereo scenes: a cylindrical probe above a textured heightfield.

Everything lives in the left camera frame (mm). The tissue is a heightfield
Z = h(X, Y); the probe is a closed cylinder whose axis points into the scene
(positive Z component). The sensing point is where the axis ray leaving the
probe tip first meets the tissue.
"""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import dataio
from .axis import extract_axis, sample_axis_points
from .errors import AmbiguousAxisError, ContractError, GenerationError, InvalidMaskError, NoIntersectionError
from .geometry import CameraRig, Point2D, Point3D, intersect_rays, project, ray_surface_intersection

log = logging.getLogger(__name__)

NEAR_PLANE_MM = 5.0


@dataclass
class HeightField:
    """Bilinearly interpolated height grid over ``extent = (x0, x1, y0, y1)``."""

    grid: np.ndarray
    extent: tuple[float, float, float, float]

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 2 or min(self.grid.shape) < 2:
            raise ContractError("heightfield grid must be 2-D with at least 2x2 nodes")
        if not np.all(np.isfinite(self.grid)):
            raise ContractError("heightfield contains non-finite heights")
        x0, x1, y0, y1 = (float(e) for e in self.extent)
        if not (x0 < x1 and y0 < y1):
            raise ContractError(f"extent must be strictly ordered, got {self.extent}")
        self.extent = (x0, x1, y0, y1)
        ny, nx = self.grid.shape
        self._dx = (x1 - x0) / (nx - 1)
        self._dy = (y1 - y0) / (ny - 1)

    @classmethod
    def from_function(cls, fn, extent, spacing=1.0):
        x0, x1, y0, y1 = extent
        nx = int(np.ceil((x1 - x0) / spacing)) + 1
        ny = int(np.ceil((y1 - y0) / spacing)) + 1
        xs = np.linspace(x0, x1, nx)
        ys = np.linspace(y0, y1, ny)
        X, Y = np.meshgrid(xs, ys)
        return cls(fn(X, Y), extent)

    @property
    def z_range(self):
        return float(self.grid.min()), float(self.grid.max())

    def _cell(self, x, y):
        x0, x1, y0, y1 = self.extent
        ny, nx = self.grid.shape
        fx = (x - x0) / self._dx
        fy = (y - y0) / self._dy
        i = np.clip(np.floor(fx), 0, nx - 2).astype(np.intp)
        j = np.clip(np.floor(fy), 0, ny - 2).astype(np.intp)
        inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        return i, j, fx - i, fy - j, inside

    def height(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        with np.errstate(invalid="ignore"):
            i, j, tx, ty, inside = self._cell(np.nan_to_num(x), np.nan_to_num(y))
        g = self.grid
        h = (g[j, i] * (1 - tx) * (1 - ty) + g[j, i + 1] * tx * (1 - ty)
             + g[j + 1, i] * (1 - tx) * ty + g[j + 1, i + 1] * tx * ty)
        return np.where(inside & np.isfinite(x) & np.isfinite(y), h, np.nan)

    def gradient(self, x, y):
        i, j, tx, ty, _ = self._cell(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        g = self.grid
        dhdx = ((g[j, i + 1] - g[j, i]) * (1 - ty) + (g[j + 1, i + 1] - g[j + 1, i]) * ty) / self._dx
        dhdy = ((g[j + 1, i] - g[j, i]) * (1 - tx) + (g[j + 1, i + 1] - g[j, i + 1]) * tx) / self._dy
        return dhdx, dhdy

    def max_ray_length(self, origin, direction):
        """Ray parameter at which the ray leaves the heightfield's bounding box."""
        x0, x1, y0, y1 = self.extent
        zmin, zmax = self.z_range
        t_exit = np.inf
        for k, lo, hi in ((0, x0, x1), (1, y0, y1), (2, zmin - 1.0, zmax + 1.0)):
            if abs(direction[k]) > 1e-15:
                a, b = (lo - origin[k]) / direction[k], (hi - origin[k]) / direction[k]
                t_exit = min(t_exit, max(a, b))
        return max(float(t_exit), 0.0)


@dataclass(frozen=True)
class ProbePose:
    tip_position: Point3D
    axis_direction: tuple[float, float, float]
    radius: float
    visible_length: float

    def __post_init__(self):
        d = np.asarray(self.axis_direction, dtype=float)
        if abs(np.linalg.norm(d) - 1) > 1e-9:
            raise ContractError("axis_direction must be a unit vector")
        if not (self.radius > 0 and self.visible_length > 0):
            raise ContractError("radius and visible_length must be > 0")

    @property
    def tail_position(self):
        return np.asarray(self.tip_position) - self.visible_length * np.asarray(self.axis_direction)


@dataclass
class SceneSpec:
    rig: CameraRig = field(default_factory=lambda: CameraRig.simple(200.0, 4.5, (192, 256)))
    surface_depth_mm: tuple[float, float] = (80.0, 110.0)
    surface_tilt_deg: float = 20.0
    surface_amplitude_mm: tuple[float, float] = (0.0, 4.0)
    surface_wavelength_mm: tuple[float, float] = (25.0, 60.0)
    surface_noise_mm: float = 0.8
    probe_radius_mm: tuple[float, float] = (3.5, 5.0)
    probe_length_mm: tuple[float, float] = (45.0, 90.0)
    tip_gap_mm: tuple[float, float] = (12.0, 35.0)
    probe_tilt_deg: tuple[float, float] = (25.0, 60.0)
    visible_fraction: tuple[float, float] = (0.5, 1.0)
    gt_margin_px: float = 8.0
    texture_seed: int = 0
    ambient: float = 0.3
    diffuse: float = 0.7
    max_attempts: int = 100

    def __post_init__(self):
        lo, hi = self.visible_fraction
        if not (0.5 <= lo <= hi <= 1.0):
            raise ContractError(f"visible_fraction must lie within [0.5, 1.0], got {self.visible_fraction}")
        if not (0 <= self.probe_tilt_deg[0] <= self.probe_tilt_deg[1] <= 60.0):
            raise ContractError("probe tilt must lie within [0, 60] degrees of the optical axis")

    def to_dict(self):
        d = asdict(self)
        d["rig"] = self.rig.to_dict()
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rig"] = CameraRig.from_dict(d["rig"])
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})


# -- procedural texture ------------------------------------------------------

def _value_noise(x, y, lattice):
    n = lattice.shape[0]
    xi = np.floor(x).astype(np.int64)
    yi = np.floor(y).astype(np.int64)
    tx = x - xi
    ty = y - yi
    sx = tx * tx * (3 - 2 * tx)
    sy = ty * ty * (3 - 2 * ty)
    i0, i1 = xi % n, (xi + 1) % n
    j0, j1 = yi % n, (yi + 1) % n
    a = lattice[j0, i0] * (1 - sx) + lattice[j0, i1] * sx
    b = lattice[j1, i0] * (1 - sx) + lattice[j1, i1] * sx
    return a * (1 - sy) + b * sy


def fbm(x, y, seed, octaves=4, base_scale=12.0):
    """Fractal value noise in [0, 1]; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    total = np.zeros(np.broadcast(x, y).shape)
    amp, norm = 1.0, 0.0
    scale = base_scale
    for _ in range(octaves):
        lattice = rng.random((64, 64))
        total += amp * _value_noise(x / scale, y / scale, lattice)
        norm += amp
        amp *= 0.5
        scale /= 2.0
    return total / norm


# -- scene construction ------------------------------------------------------

def _frustum_extent(rig: CameraRig, z_far, margin=10.0):
    H, W = rig.image_size
    xs = np.array([-rig.ox, W - 1 - rig.ox]) / rig.alpha * z_far
    ys = np.array([-rig.oy, H - 1 - rig.oy]) / rig.beta * z_far
    return (xs.min() - margin, xs.max() + rig.baseline_mm + margin, ys.min() - margin, ys.max() + margin)


def make_surface(spec: SceneSpec, rng):
    """Plane + sinusoid + smooth noise, sampled on a 1 mm grid covering the view."""
    z0 = rng.uniform(*spec.surface_depth_mm)
    tilt = np.deg2rad(rng.uniform(0, spec.surface_tilt_deg))
    phi = rng.uniform(0, 2 * np.pi)
    gx, gy = np.tan(tilt) * np.cos(phi), np.tan(tilt) * np.sin(phi)
    amp = rng.uniform(*spec.surface_amplitude_mm)
    wx, wy = rng.uniform(*spec.surface_wavelength_mm, size=2)
    px, py = rng.uniform(0, 2 * np.pi, size=2)
    noise_seed = int(rng.integers(2**31))
    noise_amp = spec.surface_noise_mm

    def fn(X, Y):
        return (z0 + gx * X + gy * Y
                + amp * np.sin(2 * np.pi * X / wx + px) * np.sin(2 * np.pi * Y / wy + py)
                + noise_amp * (2 * fbm(X, Y, noise_seed, octaves=3, base_scale=15.0) - 1))

    H, W = spec.rig.image_size
    k = np.hypot(max(spec.rig.ox, W - 1 - spec.rig.ox) / spec.rig.alpha,
                 max(spec.rig.oy, H - 1 - spec.rig.oy) / spec.rig.beta)
    z_far = (z0 + amp + noise_amp) / max(1 - np.tan(tilt) * k, 0.2) + 10.0
    return HeightField.from_function(fn, _frustum_extent(spec.rig, z_far), spacing=1.0)


def _surface_hits(surface: HeightField, origin, dirs):
    zmin, zmax = surface.z_range
    flat = dirs.reshape(-1, 3)
    origins = np.broadcast_to(origin, flat.shape)
    t_start = np.maximum((zmin - 1.0 - origin[2]) / flat[:, 2], 0.0)
    t_stop = (zmax + 1.0 - origin[2]) / flat[:, 2]
    t = intersect_rays(origins, flat, surface, t_start, t_stop)
    return t.reshape(dirs.shape[:-1])


def cylinder_hits(pose: ProbePose, origin, dirs):
    """Nearest ray parameter and outward normal for a closed cylinder (NaN on miss)."""
    a0 = np.asarray(pose.tip_position, dtype=float)
    d = np.asarray(pose.axis_direction, dtype=float)
    R, L = pose.radius, pose.visible_length
    shape = dirs.shape[:-1]
    r = dirs.reshape(-1, 3)
    w = np.asarray(origin, dtype=float) - a0
    rd = r @ d
    wd = w @ d
    r_perp = r - rd[:, None] * d
    w_perp = w - wd * d
    A = np.einsum("ij,ij->i", r_perp, r_perp)
    B = 2 * (r_perp @ w_perp)
    C = w_perp @ w_perp - R * R
    disc = B * B - 4 * A * C
    t = np.full(r.shape[0], np.inf)
    normals = np.zeros_like(r)
    with np.errstate(invalid="ignore", divide="ignore"):
        t_side = (-B - np.sqrt(disc)) / (2 * A)
        s = -(wd + t_side * rd)  # distance behind the tip along -d
        side = (disc >= 0) & (A > 1e-15) & (t_side > 0) & (s >= 0) & (s <= L)
        t[side] = t_side[side]
        p = w + t_side[:, None] * r
        n_side = p - (p @ d)[:, None] * d
        normals[side] = n_side[side] / R
        for offset, n_cap in ((0.0, d), (L, -d)):
            t_cap = (-offset - wd) / rd
            q = w + t_cap[:, None] * r
            q_perp = q - (q @ d)[:, None] * d
            cap = (t_cap > 0) & (np.einsum("ij,ij->i", q_perp, q_perp) <= R * R) & (t_cap < t)
            t[cap] = t_cap[cap]
            normals[cap] = n_cap
    t[~np.isfinite(t)] = np.nan
    return t.reshape(shape), normals.reshape(shape + (3,))


def _shade(normals, dirs, albedo, spec):
    lambert = np.clip(-np.einsum("...k,...k->...", normals, dirs), 0.0, 1.0)
    rgb = albedo * (spec.ambient + spec.diffuse * lambert)[..., None]
    return np.clip(np.round(rgb * 255), 0, 255).astype(np.uint8)


def _tissue_albedo(points, seed):
    x, y = points[..., 0], points[..., 1]
    n = fbm(x, y, seed)
    veins = fbm(x + 100.0, y - 50.0, seed + 1, octaves=3, base_scale=6.0)
    base = np.array([0.86, 0.46, 0.44])
    dark = np.array([0.55, 0.18, 0.22])
    w = (0.55 * n + 0.45 * np.clip((veins - 0.55) * 4, 0, 1))[..., None]
    return base * (1 - w) + dark * w


def _probe_albedo(points, pose: ProbePose):
    s = (np.asarray(pose.tip_position) - points) @ np.asarray(pose.axis_direction)
    band = (np.floor(s / 6.0) % 2 == 0) & (s < 18.0)
    albedo = np.broadcast_to(np.array([0.72, 0.74, 0.78]), points.shape).copy()
    albedo[band] = [0.25, 0.27, 0.32]
    return albedo


def render_view(surface, pose, rig: CameraRig, camera_x, spec: SceneSpec, texture_seed, surface_t=None):
    """Ray-cast one view from a camera at (camera_x, 0, 0).

    Returns (rgb uint8, depth along the camera Z axis, probe mask).
    """
    origin = np.array([camera_x, 0.0, 0.0])
    dirs = rig.pixel_rays()
    if surface_t is None:
        surface_t = _surface_hits(surface, origin, dirs)
    probe_t, probe_n = cylinder_hits(pose, origin, dirs)
    on_probe = np.isfinite(probe_t) & ~(surface_t <= probe_t)
    t = np.where(on_probe, probe_t, surface_t)
    points = origin + np.nan_to_num(t)[..., None] * dirs
    depth = np.where(np.isfinite(t), points[..., 2], 0.0)

    gx, gy = surface.gradient(points[..., 0], points[..., 1])
    n_surf = np.stack([gx, gy, -np.ones_like(gx)], axis=-1)
    n_surf /= np.linalg.norm(n_surf, axis=-1, keepdims=True)
    normals = np.where(on_probe[..., None], probe_n, n_surf)
    albedo = np.where(on_probe[..., None], _probe_albedo(points, pose), _tissue_albedo(points, texture_seed))
    rgb = _shade(normals, dirs, albedo, spec)
    rgb[~np.isfinite(t)] = 0
    return rgb, depth.astype(np.float32), on_probe


def projected_probe_area(pose: ProbePose, rig: CameraRig):
    """Pixel count of the whole cylinder on an unbounded image plane (no occlusion)."""
    a0 = np.asarray(pose.tip_position)
    d = np.asarray(pose.axis_direction)
    e1 = np.cross(d, [1.0, 0.0, 0.0] if abs(d[0]) < 0.9 else [0.0, 1.0, 0.0])
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(d, e1)
    ang = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    rim = pose.radius * (np.cos(ang)[:, None] * e1 + np.sin(ang)[:, None] * e2)
    pts = np.concatenate([a0 + rim, a0 - pose.visible_length * d + rim])
    uv = np.array([project(p, rig) for p in pts])
    u0, v0 = np.floor(uv.min(axis=0)) - 1
    u1, v1 = np.ceil(uv.max(axis=0)) + 1
    cols = np.arange(u0, u1 + 1)
    rows = np.arange(v0, v1 + 1)
    dirs = rig.pixel_rays(rows=rows, cols=cols)
    t, _ = cylinder_hits(pose, np.zeros(3), dirs)
    return int(np.isfinite(t).sum())


def sensing_point(pose: ProbePose, surface: HeightField, rig: CameraRig):
    """Ground-truth sensing point: 3-D oracle intersection and its left-image projection."""
    gt_3d = ray_surface_intersection(pose.tip_position, pose.axis_direction, surface)
    return project(gt_3d, rig), gt_3d


def _sample_pose(spec: SceneSpec, surface: HeightField, rng):
    rig = spec.rig
    H, W = rig.image_size
    m = spec.gt_margin_px
    u, v = rng.uniform(m, W - 1 - m), rng.uniform(m, H - 1 - m)
    ray = np.array([(u - rig.ox) / rig.alpha, (v - rig.oy) / rig.beta, 1.0])
    ray /= np.linalg.norm(ray)
    target = ray_surface_intersection(np.zeros(3), ray, surface)
    tilt = np.deg2rad(rng.uniform(*spec.probe_tilt_deg))
    azim = rng.uniform(0, 2 * np.pi)
    d = np.array([np.sin(tilt) * np.cos(azim), np.sin(tilt) * np.sin(azim), np.cos(tilt)])
    tip = np.asarray(target) - rng.uniform(*spec.tip_gap_mm) * d
    return ProbePose(
        Point3D(*tip), tuple(d), rng.uniform(*spec.probe_radius_mm), rng.uniform(*spec.probe_length_mm)
    )


def _pose_problem(pose, surface, spec, gt_2d, mask):
    """Reason to reject a pose, or None."""
    rig = spec.rig
    H, W = rig.image_size
    m = spec.gt_margin_px
    tail = pose.tail_position
    if min(pose.tip_position[2], tail[2]) - pose.radius < NEAR_PLANE_MM:
        return "probe crosses the near plane"
    if not (m <= gt_2d[0] <= W - 1 - m and m <= gt_2d[1] <= H - 1 - m):
        return "sensing point outside the image"
    if mask[int(round(gt_2d[1])), int(round(gt_2d[0]))]:
        return "sensing point hidden by the probe"
    # probe must hover above the tissue along its whole axis
    s = np.linspace(0, pose.visible_length, 32)
    axis_pts = np.asarray(pose.tip_position) - s[:, None] * np.asarray(pose.axis_direction)
    h = surface.height(axis_pts[:, 0], axis_pts[:, 1])
    if np.any(np.isfinite(h) & (h - axis_pts[:, 2] < pose.radius + 1.0)):
        return "probe touches the tissue"
    visible = mask.sum() / max(projected_probe_area(pose, rig), 1)
    lo, hi = spec.visible_fraction
    if not lo <= visible <= hi:
        return f"visible fraction {visible:.2f} outside [{lo}, {hi}]"
    try:
        extract_axis(mask)
    except (InvalidMaskError, AmbiguousAxisError) as e:
        return str(e)
    return None


def generate_sample(spec: SceneSpec, seed, sample_id=None) -> dataio.StereoSample:
    """Render one labelled stereo sample; identical seeds give identical samples."""
    return generate_scene(spec, seed, sample_id)[0]


def generate_scene(spec: SceneSpec, seed, sample_id=None):
    """Like :func:`generate_sample` but also returns the (surface, pose) it rendered."""
    rng = np.random.default_rng(seed)
    rig = spec.rig
    surface = make_surface(spec, rng)
    texture_seed = int(spec.texture_seed * 1_000_003 + rng.integers(2**31)) % (2**31)
    dirs = rig.pixel_rays()
    left_t = _surface_hits(surface, np.zeros(3), dirs)

    reason = None
    for attempt in range(spec.max_attempts):
        try:
            pose = _sample_pose(spec, surface, rng)
            gt_2d, gt_3d = sensing_point(pose, surface, rig)
        except (NoIntersectionError, ContractError) as e:
            reason = str(e)
            continue
        probe_t, _ = cylinder_hits(pose, np.zeros(3), dirs)
        mask = np.isfinite(probe_t) & ~(left_t <= probe_t)
        reason = _pose_problem(pose, surface, spec, gt_2d, mask)
        if reason is None:
            break
        log.debug("seed %s attempt %d rejected: %s", seed, attempt, reason)
    else:
        raise GenerationError(f"no valid probe pose for seed {seed} after {spec.max_attempts} draws: {reason}")

    left, depth, mask = render_view(surface, pose, rig, 0.0, spec, texture_seed, surface_t=left_t)
    right, _, _ = render_view(surface, pose, rig, rig.baseline_mm, spec, texture_seed)
    centroid, direction = extract_axis(mask)
    axis = sample_axis_points(centroid, direction, mask, seed=int(rng.integers(2**31)))
    sample = dataio.StereoSample(
        left_image=left,
        right_image=right,
        depth=depth,
        mask=mask,
        axis=axis,
        gt_2d=Point2D(float(gt_2d[0]), float(gt_2d[1])),
        gt_3d=Point3D(*(float(c) for c in gt_3d)),
        rig=rig,
        sample_id=sample_id or f"seed{seed}",
    )
    return sample.validate(), surface, pose


def _generate_and_save(args):
    spec, seed, sample_id, directory = args
    sample = generate_sample(spec, seed, sample_id)
    dataio.save_sample(sample, directory)
    return sample_id


def split_seeds(seed, counts):
    """Distinct per-sample seeds for each split, drawn without replacement."""
    total = sum(counts.values())
    rng = np.random.default_rng(seed)
    pool = rng.choice(2**31 - 1, size=total, replace=False)
    out, start = {}, 0
    for name in ("train", "val", "test"):
        n = int(counts.get(name, 0))
        out[name] = [int(s) for s in pool[start:start + n]]
        start += n
    return out


def generate_dataset(spec: SceneSpec, counts, out_dir, seed=0, workers=1) -> dataio.DatasetManifest:
    out_dir = Path(out_dir)
    (out_dir / "samples").mkdir(parents=True, exist_ok=True)
    seeds = split_seeds(seed, counts)
    jobs, splits = [], {}
    for name, split in seeds.items():
        ids = [f"{name}_{i:05d}" for i in range(len(split))]
        splits[name] = ids
        jobs += [(spec, s, sid, out_dir / "samples" / sid) for s, sid in zip(split, ids)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            list(pool.map(_generate_and_save, jobs))
    else:
        for job in jobs:
            _generate_and_save(job)
            log.info("generated %s", job[2])

    train = [dataio.load_sample(out_dir / "samples" / sid) for sid in splits["train"]]
    stats = dataio.compute_norm_stats(train) if train else {}
    manifest = dataio.DatasetManifest(
        spec=spec.to_dict(),
        splits=splits,
        rig=spec.rig,
        seed=int(seed),
        counts={k: int(counts.get(k, 0)) for k in ("train", "val", "test")},
        sample_seeds=seeds,
        norm_stats=stats,
    )
    manifest.save(out_dir)
    return manifest
