import json

import numpy as np
import pytest

from probe_sensing import dataio, scenegen
from probe_sensing.axis import axis_line_distance, extract_axis
from probe_sensing.errors import ContractError, GenerationError
from probe_sensing.geometry import CameraRig, Point2D, back_project, project
from probe_sensing.scenegen import HeightField, ProbePose, SceneSpec


def test_axis_along_optical_axis_hits_principal_point():
    rig = CameraRig.simple(200.0, 4.5, (192, 256))
    surface = HeightField.from_function(lambda X, Y: np.full_like(X, 100.0), (-80, 80, -80, 80))
    pose = ProbePose((0.0, 0.0, 60.0), (0.0, 0.0, 1.0), 4.0, 30.0)
    gt_2d, gt_3d = scenegen.sensing_point(pose, surface, rig)
    assert gt_2d == pytest.approx(rig.principal_point, abs=1e-9)
    assert gt_3d == pytest.approx((0.0, 0.0, 100.0), abs=1e-6)


def test_sample_fields(samples, scene_spec):
    H, W = scene_spec.rig.image_size
    for s in samples:
        assert s.left_image.shape == (H, W, 3) and s.left_image.dtype == np.uint8
        assert s.right_image.shape == (H, W, 3)
        assert s.depth.dtype == np.float32 and np.all(s.depth > 0)
        assert s.mask.sum() >= 100
        assert s.axis.points.shape == (50, 2)


def test_gt_consistent_with_projection(generated_scenes):
    for s, surface, pose in generated_scenes:
        assert project(s.gt_3d, s.rig) == pytest.approx(s.gt_2d, abs=1e-9)
        assert abs(s.gt_3d.Z - surface.height(s.gt_3d.X, s.gt_3d.Y)) < 1e-6


def test_back_projected_gt_matches_oracle(samples):
    for s in samples:
        p = back_project(s.gt_2d, s.depth, s.rig)
        assert np.linalg.norm(np.subtract(p, s.gt_3d)) < 0.5


def test_gt_lies_on_tissue(samples):
    for s in samples:
        u, v = (int(round(c)) for c in s.gt_2d)
        assert not s.mask[v, u]


def test_tissue_depth_agrees_with_heightfield(generated_scenes, rng):
    for s, surface, _ in generated_scenes:
        rows, cols = np.nonzero(~s.mask)
        pick = rng.choice(rows.size, size=300, replace=False)
        for r, c in zip(rows[pick], cols[pick]):
            X, Y, Z = back_project(Point2D(float(c), float(r)), s.depth, s.rig)
            assert abs(Z - surface.height(X, Y)) < 0.1


def test_epipolar_disparity(generated_scenes, rng):
    """A tissue point seen at (u, v) on the left is hit by the right ray through (u - f b / Z, v)."""
    for s, surface, pose in generated_scenes[:3]:
        rig = s.rig
        rows, cols = np.nonzero(~s.mask)
        pick = rng.choice(rows.size, size=200, replace=False)
        for r, c in zip(rows[pick], cols[pick]):
            P = np.asarray(back_project(Point2D(float(c), float(r)), s.depth, rig))
            u_right = c - rig.focal_px * rig.baseline_mm / P[2]
            ray = rig.pixel_rays(rows=np.array([float(r)]), cols=np.array([u_right]))
            t = scenegen._surface_hits(surface, np.array([rig.baseline_mm, 0.0, 0.0]), ray)[0, 0]
            probe_t, _ = scenegen.cylinder_hits(pose, np.array([rig.baseline_mm, 0.0, 0.0]), ray)
            if probe_t[0, 0] < t:
                continue  # occluded by the probe in the right view
            hit = np.array([rig.baseline_mm, 0.0, 0.0]) + t * ray[0, 0]
            assert np.linalg.norm(np.subtract(project(hit, rig), (c, r))) < 0.2


def test_visible_fraction_in_range(generated_scenes):
    for s, _, pose in generated_scenes:
        frac = s.mask.sum() / scenegen.projected_probe_area(pose, s.rig)
        assert 0.5 <= frac <= 1.0


def test_gt_near_extracted_axis_line(generated_scenes):
    for s, _, _ in generated_scenes:
        c, d = extract_axis(s.mask)
        assert axis_line_distance(s.gt_2d, c, d) < 3.0


def test_same_seed_bit_identical(scene_spec, samples):
    again = scenegen.generate_sample(scene_spec, 2, "s002")
    ref = samples[2]
    for name in ("left_image", "right_image", "depth", "mask"):
        assert np.array_equal(getattr(again, name), getattr(ref, name))
    assert again.gt_2d == ref.gt_2d and again.gt_3d == ref.gt_3d
    assert np.array_equal(again.axis.points, ref.axis.points)


def test_generation_failure_after_retries():
    spec = SceneSpec(probe_length_mm=(400.0, 500.0), max_attempts=3)
    with pytest.raises(GenerationError):
        scenegen.generate_sample(spec, 0)


def test_spec_validation():
    with pytest.raises(ContractError):
        SceneSpec(visible_fraction=(0.3, 1.0))
    with pytest.raises(ContractError):
        SceneSpec(probe_tilt_deg=(10.0, 75.0))
    spec = SceneSpec()
    assert SceneSpec.from_dict(json.loads(json.dumps(spec.to_dict()))) == spec


def test_heightfield_bilinear_exact_on_plane():
    hf = HeightField.from_function(lambda X, Y: 3.0 + 0.5 * X - 0.25 * Y, (-10, 10, -5, 5), spacing=1.0)
    x = np.array([-9.3, 0.0, 4.71])
    y = np.array([1.2, -4.99, 3.3])
    assert np.allclose(hf.height(x, y), 3.0 + 0.5 * x - 0.25 * y)
    assert np.isnan(hf.height(11.0, 0.0))
    gx, gy = hf.gradient(x, y)
    assert np.allclose(gx, 0.5) and np.allclose(gy, -0.25)


def test_dataset_layout(dataset_dir):
    manifest = dataio.load_manifest(dataset_dir)
    dirs = sorted(p.name for p in (dataset_dir / "samples").iterdir())
    assert len(dirs) == 12
    assert {k: len(v) for k, v in manifest.splits.items()} == {"train": 8, "val": 2, "test": 2}
    for sid in dirs:
        for f in ("left.png", "right.png", "depth.pfm", "mask.png", "label.json"):
            assert (dataset_dir / "samples" / sid / f).exists()
    assert set(manifest.norm_stats) == {"image_mean", "image_std", "depth_scale"}


def test_split_seeds_disjoint():
    seeds = scenegen.split_seeds(3, {"train": 200, "val": 50, "test": 50})
    flat = [s for v in seeds.values() for s in v]
    assert len(flat) == len(set(flat)) == 300
    assert set(seeds["train"]).isdisjoint(seeds["val"]) and set(seeds["val"]).isdisjoint(seeds["test"])


def test_dataset_generation_deterministic(tmp_path, scene_spec):
    counts = {"train": 2, "val": 1, "test": 1}
    a = scenegen.generate_dataset(scene_spec, counts, tmp_path / "a", seed=5)
    b = scenegen.generate_dataset(scene_spec, counts, tmp_path / "b", seed=5)
    assert (tmp_path / "a" / "manifest.json").read_bytes() == (tmp_path / "b" / "manifest.json").read_bytes()
    for sid in sum(a.splits.values(), []):
        la = (tmp_path / "a" / "samples" / sid / "label.json").read_bytes()
        lb = (tmp_path / "b" / "samples" / sid / "label.json").read_bytes()
        assert la == lb
    flat = sum(b.sample_seeds.values(), [])
    assert len(set(flat)) == len(flat)
