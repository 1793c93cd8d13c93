import json
import struct

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from probe_sensing import dataio
from probe_sensing.errors import ContractError, DataFormatError
from probe_sensing.geometry import CameraRig


def test_pad_wide_frame():
    img = np.zeros((920, 1224, 3), np.uint8)
    padded, offset = dataio.pad_to_square(img)
    assert padded.shape == (1224, 1224, 3)
    assert offset == (152, 0)


def test_pad_square_noop():
    img = np.arange(48).reshape(4, 4, 3)
    padded, offset = dataio.pad_to_square(img)
    assert offset == (0, 0) and np.array_equal(padded, img)


def test_pad_keeps_content_under_label_shift(rng):
    img = rng.integers(0, 255, size=(37, 60, 3), dtype=np.uint8)
    padded, (top, left) = dataio.pad_to_square(img)
    for _ in range(50):
        u, v = rng.integers(0, 60), rng.integers(0, 37)
        assert np.array_equal(padded[v + top, u + left], img[v, u])
    assert padded[:top].sum() == 0 and padded[top + 37:].sum() == 0


def _pfm_oracle(path):
    # independent per-pixel reader: rows stored bottom-up, little-endian floats
    with open(path, "rb") as f:
        assert f.readline() == b"Pf\n"
        w, h = (int(x) for x in f.readline().split())
        assert float(f.readline()) == -1.0
        out = np.zeros((h, w), np.float32)
        for row in range(h - 1, -1, -1):
            for col in range(w):
                (out[row, col],) = struct.unpack("<f", f.read(4))
    return out


def test_pfm_layout(tmp_path, rng):
    depth = rng.uniform(0, 150, size=(5, 7)).astype(np.float32)
    dataio.write_pfm(tmp_path / "d.pfm", depth)
    assert np.array_equal(_pfm_oracle(tmp_path / "d.pfm"), depth)
    assert np.array_equal(dataio.read_pfm(tmp_path / "d.pfm"), depth)


def test_sample_round_trip(tmp_path, samples):
    s = samples[0]
    dataio.save_sample(s, tmp_path / "x")
    back = dataio.load_sample(tmp_path / "x")
    for name in ("left_image", "right_image", "depth", "mask"):
        assert np.array_equal(getattr(back, name), getattr(s, name))
    assert back.gt_2d == s.gt_2d and back.gt_3d == s.gt_3d
    assert back.rig == s.rig and back.sample_id == s.sample_id
    assert np.array_equal(back.axis.points, s.axis.points)


def test_truncated_depth(tmp_path, samples):
    dataio.save_sample(samples[0], tmp_path / "x")
    path = tmp_path / "x" / "depth.pfm"
    path.write_bytes(path.read_bytes()[:-10])
    with pytest.raises(DataFormatError) as info:
        dataio.load_sample(tmp_path / "x")
    assert info.value.field == "depth"


@pytest.mark.parametrize("name, field", [("left.png", "left_image"), ("mask.png", "mask"),
                                         ("label.json", "label"), ("depth.pfm", "depth")])
def test_missing_file_names_field(tmp_path, samples, name, field):
    dataio.save_sample(samples[0], tmp_path / "x")
    (tmp_path / "x" / name).unlink()
    with pytest.raises(DataFormatError) as info:
        dataio.load_sample(tmp_path / "x")
    assert info.value.field == field


def test_corrupt_png(tmp_path, samples):
    dataio.save_sample(samples[0], tmp_path / "x")
    (tmp_path / "x" / "right.png").write_bytes(b"not a png")
    with pytest.raises(DataFormatError) as info:
        dataio.load_sample(tmp_path / "x")
    assert info.value.field == "right_image"


def test_out_of_bounds_label(tmp_path, samples):
    dataio.save_sample(samples[0], tmp_path / "x")
    path = tmp_path / "x" / "label.json"
    label = json.loads(path.read_text())
    label["u"] = 10_000.0
    path.write_text(json.dumps(label))
    with pytest.raises(DataFormatError) as info:
        dataio.load_sample(tmp_path / "x")
    assert info.value.field == "gt_2d"


def test_make_batch_shapes(samples):
    b = dataio.make_batch(samples[:1], 256)
    assert b.images.shape == (1, 6, 256, 256)
    assert b.depths.shape == (1, 1, 256, 256)
    assert b.masks.shape == (1, 1, 256, 256)
    assert b.axis_points.shape == (1, 100)
    assert b.targets.shape == (1, 2) and b.pixel_targets.shape == (1, 2)
    assert np.all((b.targets >= 0) & (b.targets <= 1))
    assert np.all((b.axis_points >= 0) & (b.axis_points <= 1))


def test_make_batch_standardizes(samples):
    stats = dataio.compute_norm_stats(samples)
    b = dataio.make_batch(samples, 192, stats)
    S, (top, _) = dataio.square_geometry(samples[0].rig.image_size)
    # the unpadded rows at native scale are standardized to ~zero mean, unit std per channel
    native = dataio.make_batch(samples, S, stats).images[:, :, top:top + 192]
    assert np.allclose(native.mean(axis=(0, 2, 3))[:3], 0, atol=0.05)
    assert np.allclose(native[:, :3].std(axis=(0, 2, 3)), 1, atol=0.1)
    assert b.images.dtype == np.float32


def test_make_batch_deterministic(samples):
    a = dataio.make_batch(samples, 128)
    b = dataio.make_batch(samples, 128)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.depths, b.depths)


def test_make_batch_contract_errors(samples):
    with pytest.raises(ContractError):
        dataio.make_batch([], 256)
    other = dataio.StereoSample(**{**samples[1].__dict__, "rig": CameraRig.simple(210.0, 4.5, (192, 256))})
    with pytest.raises(ContractError):
        dataio.make_batch([samples[0], other], 256)


def test_target_is_gt_over_square(samples):
    b = dataio.make_batch(samples[:3], 128)
    S, (top, left) = dataio.square_geometry(samples[0].rig.image_size)
    for s, t in zip(samples, b.targets):
        assert t == pytest.approx(((s.gt_2d.u + left) / S, (s.gt_2d.v + top) / S), abs=1e-6)


@given(st.floats(0, 1223), st.floats(0, 919))
def test_normalize_round_trip(u, v):
    S, offset = dataio.square_geometry((920, 1224))
    n = dataio.normalize_point((u, v), offset, S)
    assert 0 <= n[0] <= 1 and 0 <= n[1] <= 1
    back = dataio.denormalize_point(n, offset, S)
    assert back == pytest.approx((u, v), abs=1e-6)


@given(st.floats(0, 1223), st.floats(0, 919), st.sampled_from([128, 256, 512, 1224]))
def test_resize_mapping_round_trip(u, v, target):
    S, offset = dataio.square_geometry((920, 1224))
    p = dataio.to_target_pixels((u, v), offset, S, target)
    assert -0.5 <= p[0] <= target - 0.5 and -0.5 <= p[1] <= target - 0.5
    # rounding to the resized pixel grid and mapping back stays within a pixel at full resolution
    q = dataio.from_target_pixels((round(p[0]), round(p[1])), offset, S, target)
    assert abs(q[0] - u) <= 0.5 * S / target + 1e-9 and abs(q[1] - v) <= 0.5 * S / target + 1e-9
    exact = dataio.from_target_pixels(p, offset, S, target)
    assert exact == pytest.approx((u, v), abs=1e-6)


def test_resized_gt_lands_on_marked_pixel():
    img = np.zeros((96, 128, 3), np.uint8)
    img[40:44, 70:74] = 255  # a 4x4 white block centred at (71.5, 41.5)
    padded, offset = dataio.pad_to_square(img)
    S = padded.shape[0]
    import torch
    small = torch.nn.functional.interpolate(
        torch.from_numpy(padded.transpose(2, 0, 1)[None].astype(np.float64)), size=(64, 64),
        mode="bilinear", align_corners=False)[0, 0].numpy()
    peak = np.unravel_index(np.argmax(small), small.shape)
    u_t, v_t = dataio.to_target_pixels((71.5, 41.5), offset, S, 64)
    assert abs(peak[1] - u_t) <= 0.5 and abs(peak[0] - v_t) <= 0.5
    back = dataio.from_target_pixels((peak[1], peak[0]), offset, S, 64)
    assert abs(back[0] - 71.5) <= 1.0 and abs(back[1] - 41.5) <= 1.0


def test_manifest_overlap_rejected(tmp_path, dataset_dir):
    m = dataio.load_manifest(dataset_dir)
    m.splits["val"] = m.splits["val"] + m.splits["train"][:1]
    with pytest.raises(ContractError):
        m.validate()
