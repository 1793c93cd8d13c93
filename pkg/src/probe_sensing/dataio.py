"""On-disk dataset format, preprocessing and batch assembly.

Layout::

    root/manifest.json
    root/samples/<id>/left.png right.png depth.pfm mask.png label.json

Depth maps are PFM (``Pf``, little-endian scale -1.0, rows stored bottom-up).
Label coordinates are in pixels of the original (unpadded) left image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .axis import AxisSample
from .errors import ContractError, DataFormatError
from .geometry import CameraRig, Point2D, Point3D

MANIFEST_VERSION = "1.0"
DEFAULT_TARGET_SIZE = 256


@dataclass
class StereoSample:
    left_image: np.ndarray
    right_image: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    axis: AxisSample
    gt_2d: Point2D
    gt_3d: Point3D
    rig: CameraRig
    sample_id: str

    def validate(self):
        H, W = self.rig.image_size
        for name in ("left_image", "right_image"):
            img = getattr(self, name)
            if img.shape != (H, W, 3) or img.dtype != np.uint8:
                raise DataFormatError(name, f"expected uint8 {(H, W, 3)}, got {img.dtype} {img.shape}")
        if self.depth.shape != (H, W):
            raise DataFormatError("depth", f"expected {(H, W)}, got {self.depth.shape}")
        if not np.all(np.isfinite(self.depth)) or np.any(self.depth < 0):
            raise DataFormatError("depth", "depth must be finite and non-negative")
        if self.mask.shape != (H, W):
            raise DataFormatError("mask", f"expected {(H, W)}, got {self.mask.shape}")
        u, v = self.gt_2d
        if not (0 <= u <= W - 1 and 0 <= v <= H - 1):
            raise DataFormatError("gt_2d", f"({u}, {v}) outside {W}x{H} image")
        if not self.gt_3d[2] > 0:
            raise DataFormatError("gt_3d", f"Z must be > 0, got {self.gt_3d[2]}")
        return self

    @property
    def image_size(self):
        return self.rig.image_size


# -- PFM ---------------------------------------------------------------------

def write_pfm(path, array):
    array = np.asarray(array, dtype="<f4")
    if array.ndim != 2:
        raise ValueError("only single-channel PFM is supported")
    height, width = array.shape
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{width} {height}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(array[::-1]).tobytes())


def read_pfm(path):
    with open(path, "rb") as f:
        try:
            header = f.readline().strip()
            if header != b"Pf":
                raise ValueError(f"bad magic {header!r}")
            width, height = (int(x) for x in f.readline().split())
            scale = float(f.readline().strip())
        except ValueError as e:
            raise DataFormatError("depth", f"bad PFM header in {path}: {e}") from None
        data = f.read()
    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * 4
    if len(data) != expected:
        raise DataFormatError("depth", f"{path} has {len(data)} data bytes, expected {expected}")
    arr = np.frombuffer(data, dtype=dtype).reshape(height, width)
    return arr[::-1].astype(np.float32)


# -- samples -----------------------------------------------------------------

def save_sample(sample: StereoSample, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    Image.fromarray(sample.left_image).save(directory / "left.png")
    Image.fromarray(sample.right_image).save(directory / "right.png")
    Image.fromarray(sample.mask.astype(np.uint8) * 255).save(directory / "mask.png")
    write_pfm(directory / "depth.pfm", sample.depth)
    label = {
        "sample_id": sample.sample_id,
        "u": float(sample.gt_2d[0]),
        "v": float(sample.gt_2d[1]),
        "X": float(sample.gt_3d[0]),
        "Y": float(sample.gt_3d[1]),
        "Z": float(sample.gt_3d[2]),
        "axis_points": sample.axis.points.tolist(),
        "axis_direction": list(sample.axis.direction),
        "axis_centroid": list(sample.axis.centroid),
        "rig": sample.rig.to_dict(),
    }
    (directory / "label.json").write_text(json.dumps(label, indent=1, sort_keys=True))


def _read_png(path, field_name, mode):
    if not path.exists():
        raise DataFormatError(field_name, f"missing file {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode != mode:
                raise DataFormatError(field_name, f"expected PNG mode {mode}, got {im.mode}")
            return np.array(im)
    except OSError as e:
        raise DataFormatError(field_name, f"cannot decode {path}: {e}") from None


def load_sample(directory) -> StereoSample:
    directory = Path(directory)
    label_path = directory / "label.json"
    if not label_path.exists():
        raise DataFormatError("label", f"missing file {label_path}")
    try:
        label = json.loads(label_path.read_text())
        rig = CameraRig.from_dict(label["rig"])
        gt_2d = Point2D(float(label["u"]), float(label["v"]))
        gt_3d = Point3D(float(label["X"]), float(label["Y"]), float(label["Z"]))
        axis = AxisSample(
            np.asarray(label["axis_points"], dtype=float).reshape(-1, 2),
            tuple(label["axis_direction"]),
            tuple(label["axis_centroid"]),
        )
        sample_id = label["sample_id"]
    except (ValueError, KeyError, TypeError) as e:
        raise DataFormatError("label", f"invalid label file {label_path}: {e!r}") from None
    depth_path = directory / "depth.pfm"
    if not depth_path.exists():
        raise DataFormatError("depth", f"missing file {depth_path}")
    sample = StereoSample(
        left_image=_read_png(directory / "left.png", "left_image", "RGB"),
        right_image=_read_png(directory / "right.png", "right_image", "RGB"),
        depth=read_pfm(depth_path),
        mask=_read_png(directory / "mask.png", "mask", "L") > 127,
        axis=axis,
        gt_2d=gt_2d,
        gt_3d=gt_3d,
        rig=rig,
        sample_id=sample_id,
    )
    return sample.validate()


# -- manifest ----------------------------------------------------------------

@dataclass
class DatasetManifest:
    spec: dict
    splits: dict
    rig: CameraRig
    seed: int
    counts: dict
    sample_seeds: dict = field(default_factory=dict)
    norm_stats: dict = field(default_factory=dict)
    version: str = MANIFEST_VERSION

    def validate(self, root=None):
        seen = set()
        for name, ids in self.splits.items():
            dup = seen.intersection(ids)
            if dup:
                raise ContractError(f"split {name} overlaps other splits: {sorted(dup)[:3]}")
            seen.update(ids)
            if root is not None:
                for sid in ids:
                    if not (Path(root) / "samples" / sid).is_dir():
                        raise ContractError(f"sample {sid} listed in manifest but missing on disk")
        return self

    def to_dict(self):
        return {
            "version": self.version,
            "spec": self.spec,
            "splits": self.splits,
            "rig": self.rig.to_dict(),
            "seed": self.seed,
            "counts": self.counts,
            "sample_seeds": self.sample_seeds,
            "norm_stats": self.norm_stats,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["rig"] = CameraRig.from_dict(d["rig"])
        return cls(**d)

    def save(self, root):
        path = Path(root) / "manifest.json"
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        return path


def load_manifest(root) -> DatasetManifest:
    path = Path(root) / "manifest.json"
    if not path.exists():
        raise DataFormatError("manifest", f"missing {path}")
    try:
        manifest = DatasetManifest.from_dict(json.loads(path.read_text()))
    except (ValueError, KeyError, TypeError) as e:
        raise DataFormatError("manifest", f"invalid manifest {path}: {e!r}") from None
    return manifest.validate(root)


def load_split(root, split):
    manifest = load_manifest(root)
    if split not in manifest.splits:
        raise ContractError(f"unknown split {split!r}; have {sorted(manifest.splits)}")
    return [load_sample(Path(root) / "samples" / sid) for sid in manifest.splits[split]]


def compute_norm_stats(samples):
    """Per-RGB-channel mean/std over left and right images, and the mean valid depth."""
    total = np.zeros(3)
    total_sq = np.zeros(3)
    count = 0
    depth_sum = 0.0
    depth_count = 0
    for s in samples:
        for img in (s.left_image, s.right_image):
            x = img.reshape(-1, 3).astype(np.float64) / 255.0
            total += x.sum(axis=0)
            total_sq += (x * x).sum(axis=0)
            count += x.shape[0]
        valid = s.depth[s.depth > 0]
        depth_sum += float(valid.sum(dtype=np.float64))
        depth_count += valid.size
    if count == 0:
        raise ContractError("cannot compute normalization statistics from an empty split")
    mean = total / count
    std = np.sqrt(np.maximum(total_sq / count - mean**2, 1e-12))
    return {
        "image_mean": mean.tolist(),
        "image_std": std.tolist(),
        "depth_scale": depth_sum / max(depth_count, 1),
    }


# -- preprocessing -----------------------------------------------------------

def pad_to_square(image):
    """Zero-pad the short side symmetrically. Returns (padded, (top, left))."""
    image = np.asarray(image)
    H, W = image.shape[:2]
    S = max(H, W)
    top = (S - H) // 2
    left = (S - W) // 2
    if top == 0 and left == 0:
        return image, (0, 0)
    pad = [(top, S - H - top), (left, S - W - left)] + [(0, 0)] * (image.ndim - 2)
    return np.pad(image, pad), (top, left)


def square_geometry(image_size):
    """(S, (top, left)) of the padded square for an ``(H, W)`` image."""
    H, W = image_size
    S = max(H, W)
    return S, ((S - H) // 2, (S - W) // 2)


def normalize_point(p, offset, S):
    top, left = offset
    return ((p[0] + left) / S, (p[1] + top) / S)


def denormalize_point(n, offset, S):
    top, left = offset
    return Point2D(n[0] * S - left, n[1] * S - top)


def to_target_pixels(p, offset, S, target_size):
    """Original-image pixel -> pixel in the resized padded image (half-pixel centres)."""
    th, tw = _pair(target_size)
    top, left = offset
    return ((p[0] + left + 0.5) * tw / S - 0.5, (p[1] + top + 0.5) * th / S - 0.5)


def from_target_pixels(p, offset, S, target_size):
    th, tw = _pair(target_size)
    top, left = offset
    return Point2D((p[0] + 0.5) * S / tw - 0.5 - left, (p[1] + 0.5) * S / th - 0.5 - top)


def _pair(size):
    if isinstance(size, (int, np.integer)):
        return int(size), int(size)
    h, w = size
    return int(h), int(w)


@dataclass
class Batch:
    images: np.ndarray  # N x 6 x H' x W'
    depths: np.ndarray  # N x 1 x H' x W'
    masks: np.ndarray  # N x 1 x H' x W'
    axis_points: np.ndarray  # N x 2*n_points, normalized (u, v) pairs
    targets: np.ndarray  # N x 2, normalized
    pixel_targets: np.ndarray  # N x 2, original pixels
    sample_ids: list
    offset: tuple
    square_size: int
    rig: CameraRig

    def __len__(self):
        return len(self.sample_ids)

    def tensors(self, dtype=torch.float32):
        return (
            torch.from_numpy(self.images).to(dtype),
            torch.from_numpy(self.depths).to(dtype),
            torch.from_numpy(self.axis_points).to(dtype),
            torch.from_numpy(self.targets).to(dtype),
        )

    def subset(self, index):
        index = np.asarray(index)
        return Batch(
            self.images[index], self.depths[index], self.masks[index], self.axis_points[index],
            self.targets[index], self.pixel_targets[index], [self.sample_ids[i] for i in index],
            self.offset, self.square_size, self.rig,
        )


def _resize(arr, size, mode):
    t = torch.from_numpy(np.ascontiguousarray(arr))[None]
    if tuple(t.shape[-2:]) == size:
        return arr
    if mode == "nearest":
        out = F.interpolate(t.float(), size=size, mode="nearest")
    else:
        out = F.interpolate(t, size=size, mode="bilinear", align_corners=False)
    return out[0].numpy()


def make_batch(samples, target_size=DEFAULT_TARGET_SIZE, norm_stats=None) -> Batch:
    """Pad, resize and normalize a list of samples sharing one camera rig."""
    if not samples:
        raise ContractError("make_batch needs at least one sample")
    rig = samples[0].rig
    for s in samples[1:]:
        if s.rig != rig:
            raise ContractError(f"heterogeneous rigs in batch: {s.sample_id} differs from {samples[0].sample_id}")
    size = _pair(target_size)
    S, offset = square_geometry(rig.image_size)
    if norm_stats is None:
        norm_stats = {"image_mean": [0.5] * 3, "image_std": [0.25] * 3, "depth_scale": 100.0}
    mean = np.asarray(norm_stats["image_mean"], dtype=np.float64)
    std = np.asarray(norm_stats["image_std"], dtype=np.float64)
    mean6 = np.concatenate([mean, mean])[:, None, None]
    std6 = np.concatenate([std, std])[:, None, None]

    images, depths, masks, axes, targets, pixels = [], [], [], [], [], []
    for s in samples:
        stereo = np.concatenate([s.left_image, s.right_image], axis=2)
        stereo, _ = pad_to_square(stereo)
        img = stereo.transpose(2, 0, 1).astype(np.float64) / 255.0
        img = _resize(img, size, "bilinear")
        images.append(((img - mean6) / std6).astype(np.float32))
        depth, _ = pad_to_square(s.depth.astype(np.float64) / norm_stats["depth_scale"])
        depths.append(_resize(depth[None], size, "bilinear").astype(np.float32))
        mask, _ = pad_to_square(s.mask.astype(np.float32))
        masks.append(_resize(mask[None], size, "nearest") > 0.5)
        pts = np.array([normalize_point(p, offset, S) for p in s.axis.points])
        axes.append(pts.reshape(-1))
        targets.append(normalize_point(s.gt_2d, offset, S))
        pixels.append(tuple(s.gt_2d))
    return Batch(
        images=np.stack(images),
        depths=np.stack(depths),
        masks=np.stack(masks),
        axis_points=np.asarray(axes, dtype=np.float32),
        targets=np.asarray(targets, dtype=np.float32),
        pixel_targets=np.asarray(pixels, dtype=np.float64),
        sample_ids=[s.sample_id for s in samples],
        offset=offset,
        square_size=S,
        rig=rig,
    )
