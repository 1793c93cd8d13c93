"""Probe axis from a binary mask: PCA direction plus seeded samples along it."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AmbiguousAxisError, InvalidMaskError

MIN_MASK_PIXELS = 100
MIN_EIGEN_RATIO = 1.05
N_AXIS_POINTS = 50


@dataclass(frozen=True)
class AxisSample:
    points: np.ndarray  # (n, 2) as (u, v), sorted along the axis
    direction: tuple[float, float]
    centroid: tuple[float, float]

    def to_dict(self):
        return {
            "points": self.points.tolist(),
            "direction": list(self.direction),
            "centroid": list(self.centroid),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["points"], dtype=float).reshape(-1, 2), tuple(d["direction"]), tuple(d["centroid"]))


def _foreground_coords(mask):
    mask = np.asarray(mask, dtype=bool)
    if mask.ndim != 2:
        raise InvalidMaskError(f"mask must be 2-D, got shape {mask.shape}")
    rows, cols = np.nonzero(mask)
    if rows.size < MIN_MASK_PIXELS:
        raise InvalidMaskError(f"mask has {rows.size} foreground pixels, need >= {MIN_MASK_PIXELS}")
    return np.stack([cols, rows], axis=1).astype(float)


def extract_axis(mask):
    """Centroid and first principal direction of the mask's pixel coordinates.

    The direction sign is canonical: u-component >= 0, and v-component >= 0
    when u-component is zero.
    """
    uv = _foreground_coords(mask)
    centroid = uv.mean(axis=0)
    cov = np.cov(uv - centroid, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    small, large = evals
    if large < MIN_EIGEN_RATIO * small:
        raise AmbiguousAxisError(f"eigenvalue ratio {large / max(small, 1e-300):.4f} < {MIN_EIGEN_RATIO}")
    direction = evecs[:, 1]
    if direction[0] < 0 or (direction[0] == 0 and direction[1] < 0):
        direction = -direction
    return (float(centroid[0]), float(centroid[1])), (float(direction[0]), float(direction[1]))


def sample_axis_points(centroid, direction, mask, n=N_AXIS_POINTS, seed=0) -> AxisSample:
    """Draw ``n`` points uniformly on the axis segment covering the mask's axial extent."""
    uv = _foreground_coords(mask)
    c = np.asarray(centroid, dtype=float)
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    s = (uv - c) @ d
    s_lo, s_hi = s.min(), s.max()
    # the centreline stays inside the image even when the extreme pixels lie off it
    H, W = np.shape(mask)
    s_lo, s_hi = _clip_to_image(c, d, s_lo, s_hi, W, H)
    rng = np.random.default_rng(seed)
    t = np.sort(rng.uniform(s_lo, s_hi, size=n))
    points = c[None, :] + t[:, None] * d[None, :]
    return AxisSample(points, (float(d[0]), float(d[1])), (float(c[0]), float(c[1])))


def _clip_to_image(c, d, s_lo, s_hi, W, H):
    bounds = ((0.0, W - 1.0), (0.0, H - 1.0))
    for k, (lo, hi) in enumerate(bounds):
        if abs(d[k]) < 1e-12:
            continue
        a, b = (lo - c[k]) / d[k], (hi - c[k]) / d[k]
        s_lo, s_hi = max(s_lo, min(a, b)), min(s_hi, max(a, b))
    return s_lo, s_hi


def axis_line_distance(point, centroid, direction):
    """Perpendicular pixel distance from ``point`` to the infinite axis line."""
    p = np.asarray(point, dtype=float) - np.asarray(centroid, dtype=float)
    d = np.asarray(direction, dtype=float)
    return float(abs(p[0] * d[1] - p[1] * d[0]) / np.linalg.norm(d))
