"""Quick oracle suites run by ``probe-sensing selftest``.

Each suite returns ``(passed, detail)``; they are deliberately small versions
of the checks in the test suite so a fresh install can be verified in about a
minute.
"""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np
import torch

from . import dataio
from .axis import extract_axis
from .errors import AmbiguousAxisError
from .geometry import CameraRig, Point3D, back_project, disparity_to_depth, error_2d, error_3d, project
from .geometry import ray_surface_intersection
from .model import ModelConfig, NestedResNetEncoder, build_model
from .scenegen import HeightField
from .training import loss_fn


def geometry_roundtrip(rng):
    rig = CameraRig(1000.0, 4.5, 1000.0, 980.0, (612.0, 460.0), (920, 1224))
    worst = 0.0
    for _ in range(1000):
        q = Point3D(rng.uniform(-50, 50), rng.uniform(-40, 40), rng.uniform(20, 300))
        r = back_project(project(q, rig), q.Z, rig)
        worst = max(worst, max(abs(a - b) / max(abs(b), 1e-12) for a, b in zip(r, q)))
    disp = rng.uniform(0.0, 80.0, size=(4, 5))
    disp[0, 0] = 0.0
    small = CameraRig.simple(700.0, 5.0, (4, 5))
    depth = disparity_to_depth(disp, small)
    exact = all(
        depth[i, j] == (700.0 * 5.0 / disp[i, j] if disp[i, j] > 1e-6 else 0.0)
        for i in range(4) for j in range(5)
    )
    metrics = error_2d((3, 4), (0, 0)) == 5.0 and error_3d((1, 2, 2), (0, 0, 0)) == 3.0
    ok = worst < 1e-6 and exact and metrics
    return ok, f"max relative round-trip error {worst:.2e}"


def _fine_march(origin, direction, surface, step):
    t_max = surface.max_ray_length(origin, direction)
    t = np.arange(0.0, t_max + step, step)
    p = origin + t[:, None] * direction
    f = p[:, 2] - surface.height(p[:, 0], p[:, 1])
    k = np.flatnonzero(np.sign(f[1:]) != np.sign(f[:-1]))[0]
    t_root = t[k] - f[k] * (t[k + 1] - t[k]) / (f[k + 1] - f[k])
    return origin + t_root * direction


def sinusoid_surface(rng):
    z0 = rng.uniform(60, 120)
    amp = rng.uniform(1, 6)
    wx, wy = rng.uniform(15, 40, size=2)
    phx, phy = rng.uniform(0, 2 * np.pi, size=2)
    return HeightField.from_function(
        lambda X, Y: z0 + amp * np.sin(2 * np.pi * X / wx + phx) * np.cos(2 * np.pi * Y / wy + phy),
        (-100, 100, -100, 100), spacing=0.5,
    )


def ray_oracle(rng, n_scenes=10):
    worst = 0.0
    for _ in range(n_scenes):
        surface = sinusoid_surface(rng)
        origin = np.array([rng.uniform(-10, 10), rng.uniform(-10, 10), 0.0])
        tilt, az = rng.uniform(0, 0.5), rng.uniform(0, 2 * np.pi)
        d = np.array([np.sin(tilt) * np.cos(az), np.sin(tilt) * np.sin(az), np.cos(tilt)])
        hit = np.asarray(ray_surface_intersection(origin, d, surface))
        ref = _fine_march(origin, d, surface, 0.025)
        worst = max(worst, float(np.linalg.norm(hit - ref)))
    return worst < 1e-3, f"max deviation from fine march {worst:.2e} mm"


def rectangle_mask(angle_deg, length=120, width=20, size=256):
    v, u = np.mgrid[0:size, 0:size].astype(float)
    c = (size - 1) / 2
    a = np.deg2rad(angle_deg)
    along = (u - c) * np.cos(a) + (v - c) * np.sin(a)
    across = -(u - c) * np.sin(a) + (v - c) * np.cos(a)
    return (np.abs(along) <= length / 2) & (np.abs(across) <= width / 2)


def pca_axis(rng):
    worst = 0.0
    for angle in (0, 15, 30, 45, 60, 75):
        _, d = extract_axis(rectangle_mask(angle))
        got = math.degrees(math.atan2(d[1], d[0]))
        worst = max(worst, abs(got - angle))
    v, u = np.mgrid[0:128, 0:128]
    disc = (u - 63.5) ** 2 + (v - 63.5) ** 2 <= 40**2
    try:
        extract_axis(disc)
        disc_ok = False
    except AmbiguousAxisError:
        disc_ok = True
    return worst < 1.0 and disc_ok, f"max angular error {worst:.3f} deg"


def shape_audit(rng):
    failures = []
    for base in (8, 16):
        for exp in (2, 4):
            cfg = ModelConfig(base_channels=base, ebn_expansion=exp, block_counts=(1, 1, 1, 1))
            enc = NestedResNetEncoder(cfg).eval()
            with torch.no_grad():
                outs = enc(torch.zeros(1, 6, 64, 64))
            want = [(base, 32)] + [(base * exp ** (i + 1), 64 // 2 ** (i + 2)) for i in range(4)]
            got = [(o.shape[1], o.shape[2]) for o in outs]
            if got != want:
                failures.append((base, exp, got))
    return not failures, "all stages match" if not failures else f"mismatches {failures}"


GRADCHECK_CONFIG = ModelConfig(base_channels=8, block_counts=(1, 1, 1, 1), ebn_expansion=2, head_hidden_sizes=(16,))


def gradient_check(rng, n_params=20, cfg=GRADCHECK_CONFIG):
    model = build_model(cfg, seed=0).double()
    with torch.no_grad():
        for p in model.parameters():
            p.add_(0.05 * torch.randn_like(p))
    # batch of 4: the last encoder stage is 1x1 here, and batch-norm over only two values is degenerate
    g = torch.Generator().manual_seed(1)
    images = torch.randn(4, 6, 32, 32, generator=g, dtype=torch.float64)
    depths = torch.rand(4, 1, 32, 32, generator=g, dtype=torch.float64)
    axes = torch.rand(4, 100, generator=g, dtype=torch.float64)
    target = torch.rand(4, 2, generator=g, dtype=torch.float64)

    def loss():
        return loss_fn(model(images, depths, axes), target)

    model.train()
    model.zero_grad()
    loss().backward()
    params = [p for p in model.parameters()]
    worst = 0.0
    for _ in range(n_params):
        p = params[rng.integers(len(params))]
        idx = tuple(int(rng.integers(s)) for s in p.shape)
        analytic = p.grad[idx].item()
        # roundoff in the loss is ~1e-16 / h, so tiny derivatives need a wider step;
        # the step depends only on the magnitude, never on the agreement being tested
        h = 1e-6 if abs(analytic) >= 1e-6 else 1e-4
        with torch.no_grad():
            orig = p[idx].item()
            p[idx] = orig + h
            up = loss().item()
            p[idx] = orig - h
            down = loss().item()
            p[idx] = orig
        numeric = (up - down) / (2 * h)
        worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-300))
    return worst < 1e-4, f"max relative gradient error {worst:.2e} over {n_params} parameters"


def pfm_roundtrip(rng):
    depth = rng.uniform(0, 200, size=(7, 9)).astype(np.float32)
    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.pfm"
        dataio.write_pfm(path, depth)
        back = dataio.read_pfm(path)
    return bool(np.array_equal(depth, back)), "PFM write/read identity"


SUITES = {
    "geometry_roundtrip": geometry_roundtrip,
    "ray_oracle": ray_oracle,
    "pca_axis": pca_axis,
    "shape_audit": shape_audit,
    "gradient_check": gradient_check,
    "pfm_roundtrip": pfm_roundtrip,
}


def run_all(seed=0, printer=print):
    results = {}
    for name, suite in SUITES.items():
        rng = np.random.default_rng(seed)
        try:
            ok, detail = suite(rng)
        except Exception as e:  # a crashing suite is a failing suite
            ok, detail = False, f"{type(e).__name__}: {e}"
        results[name] = {"passed": bool(ok), "detail": detail}
        printer(f"{'PASS' if ok else 'FAIL'}  {name:<20} {detail}")
    return results
