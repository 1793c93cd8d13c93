"""Table-style error reports, overlays and report comparison."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

from . import dataio
from .checkpoint import load_checkpoint
from .errors import ContractError, MissingDepthError, OutOfBoundsError
from .geometry import Point2D, back_project, error_2d, error_3d

OVERLAY_RADIUS = 5
GT_COLOR = (255, 0, 0)
PRED_COLOR = (0, 255, 0)
STD_CONVENTION = "population"


@dataclass
class EvalReport:
    per_sample: list
    aggregates: dict
    split: str
    config: dict = field(default_factory=dict)
    std_convention: str = STD_CONVENTION

    @property
    def sample_ids(self):
        return [row["sample_id"] for row in self.per_sample]

    @property
    def n_depth_missing(self):
        return sum(1 for row in self.per_sample if row["depth_missing"])

    def to_dict(self):
        return {
            "split": self.split,
            "std_convention": self.std_convention,
            "n_samples": len(self.per_sample),
            "n_depth_missing": self.n_depth_missing,
            "aggregates": self.aggregates,
            "config": self.config,
            "per_sample": self.per_sample,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["per_sample"], d["aggregates"], d["split"], d.get("config", {}),
                   d.get("std_convention", STD_CONVENTION))

    def save(self, report_dir):
        report_dir = Path(report_dir)
        report_dir.mkdir(parents=True, exist_ok=True)
        (report_dir / "report.json").write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        (report_dir / "report.txt").write_text(format_table([("model", self.config.get("branches", ()), self)]))


def summarize(values):
    """Mean, population std and median; NaNs for an empty list."""
    if len(values) == 0:
        return {"mean": math.nan, "std": math.nan, "median": math.nan, "count": 0}
    a = np.asarray(values, dtype=np.float64)
    return {"mean": float(a.mean()), "std": float(a.std()), "median": float(np.median(a)), "count": int(a.size)}


def aggregate(rows):
    err2 = [r["err_2d_px"] for r in rows]
    err3 = [r["err_3d_mm"] for r in rows if not r["depth_missing"]]
    return {"2d": summarize(err2), "3d": summarize(err3)}


def score_sample(sample: dataio.StereoSample, pred_2d):
    """One report row. 3-D points use each point's own depth-map pixel."""
    pred_2d = Point2D(float(pred_2d[0]), float(pred_2d[1]))
    row = {
        "sample_id": sample.sample_id,
        "pred_2d": list(pred_2d),
        "gt_2d": [float(c) for c in sample.gt_2d],
        "err_2d_px": error_2d(pred_2d, sample.gt_2d),
        "pred_3d": None,
        "gt_3d": None,
        "err_3d_mm": None,
        "depth_missing": False,
        "pred_clamped": not (0 <= pred_2d[0] <= sample.rig.image_size[1] - 1
                             and 0 <= pred_2d[1] <= sample.rig.image_size[0] - 1),
    }
    try:
        pred_3d = back_project(pred_2d, sample.depth, sample.rig)
        gt_3d = back_project(sample.gt_2d, sample.depth, sample.rig)
    except (OutOfBoundsError, MissingDepthError):
        row["depth_missing"] = True
        return row
    row.update(pred_3d=list(pred_3d), gt_3d=list(gt_3d), err_3d_mm=error_3d(pred_3d, gt_3d))
    return row


@torch.no_grad()
def predict_normalized(model, batch: dataio.Batch, chunk=16):
    model.eval()
    dtype = next(model.parameters()).dtype
    images, depths, axes, _ = batch.tensors(dtype)
    out = [model(images[i:i + chunk], depths[i:i + chunk], axes[i:i + chunk]) for i in range(0, len(batch), chunk)]
    return torch.cat(out).double().numpy()


def predict_pixels(model, batch: dataio.Batch):
    """Predictions in pixels of the original (unpadded) image."""
    norm = predict_normalized(model, batch)
    return np.array([dataio.denormalize_point(n, batch.offset, batch.square_size) for n in norm])


def score_batch(samples, preds):
    rows = sorted((score_sample(s, p) for s, p in zip(samples, preds)), key=lambda r: r["sample_id"])
    return rows, aggregate(rows)


def evaluate(checkpoint, data_dir, split="test", report_dir=None, overlays=True) -> EvalReport:
    model, payload = load_checkpoint(checkpoint)
    samples = dataio.load_split(data_dir, split)
    if not samples:
        raise ContractError(f"split {split!r} is empty")
    train_cfg = payload.get("train_config") or {}
    target = train_cfg.get("target_size", dataio.DEFAULT_TARGET_SIZE)
    norm_stats = payload.get("norm_stats") or dataio.load_manifest(data_dir).norm_stats
    batch = dataio.make_batch(samples, target, norm_stats)
    preds = predict_pixels(model, batch)
    rows, aggregates = score_batch(samples, preds)
    report = EvalReport(rows, aggregates, split, config={
        "checkpoint": str(checkpoint),
        "data": str(data_dir),
        "branches": list(model.cfg.branches),
        "model_config": model.cfg.to_dict(),
        "target_size": target,
    })
    if report_dir is not None:
        report_dir = Path(report_dir)
        if overlays:
            by_id = {s.sample_id: s for s in samples}
            for row in rows:
                s = by_id[row["sample_id"]]
                img, _ = render_overlay(s.left_image, s.gt_2d, row["pred_2d"])
                save_overlay(img, report_dir / "overlays" / f"{s.sample_id}.png")
        report.save(report_dir)
    return report


def _disc(draw, center, radius, color, width=None):
    u, v = center
    box = [u - radius, v - radius, u + radius, v + radius]
    if width is None:
        draw.ellipse(box, fill=color)
    else:
        draw.ellipse(box, outline=color, width=width)


def render_overlay(image, gt_2d, pred_2d, radius=OVERLAY_RADIUS):
    """Green filled dot at the prediction, red ring at the ground truth.

    Off-image predictions are clamped to the border; returns (image, clamped).
    """
    H, W = image.shape[:2]
    u = min(max(float(pred_2d[0]), 0.0), W - 1.0)
    v = min(max(float(pred_2d[1]), 0.0), H - 1.0)
    clamped = (u, v) != (float(pred_2d[0]), float(pred_2d[1]))
    im = Image.fromarray(np.ascontiguousarray(image))
    draw = ImageDraw.Draw(im)
    _disc(draw, (u, v), radius, PRED_COLOR)
    # ring drawn last so it stays visible when the dots coincide
    _disc(draw, gt_2d, radius, GT_COLOR, width=2)
    return np.asarray(im), clamped


def save_overlay(image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(image).save(path)
    return path


def percent_change(before, after):
    if before == 0:
        return 0.0 if after == 0 else math.copysign(math.inf, after)
    return 100.0 * (after - before) / before


def compare_reports(a: EvalReport, b: EvalReport):
    """Percentage change of every aggregate going from ``a`` to ``b`` (negative = lower error)."""
    if a.split != b.split or a.sample_ids != b.sample_ids:
        raise ContractError(f"reports cover different splits: {a.split!r} vs {b.split!r}")
    out = {}
    for dim in ("2d", "3d"):
        for stat in ("mean", "std", "median"):
            out[f"{dim}_{stat}"] = percent_change(a.aggregates[dim][stat], b.aggregates[dim][stat])
    return out


def format_delta_table(deltas):
    lines = ["metric        change"]
    lines += [f"{name:<12} {value:+8.2f}%" for name, value in deltas.items()]
    return "\n".join(lines) + "\n"


def format_table(rows):
    """Text table with one line per (label, branches, report), columns matching the usual ablation table."""
    head = (f"{'Method':<16}{'Image':<8}{'Axis':<6}{'Depth':<7}|"
            f"{'2D Mean E.':>11}{'STD':>8}{'Median':>8} |{'3D Mean E.':>11}{'STD':>8}{'Median':>8}")
    lines = [head, "-" * len(head)]
    for label, branches, report in rows:
        a2, a3 = report.aggregates["2d"], report.aggregates["3d"]
        flags = ("NResNet" if "image" in branches else "-",
                 "MLP" if "axis" in branches else "-",
                 "CNN" if "depth" in branches else "-")
        lines.append(f"{label:<16}{flags[0]:<8}{flags[1]:<6}{flags[2]:<7}|"
                     f"{a2['mean']:>11.2f}{a2['std']:>8.2f}{a2['median']:>8.2f} |"
                     f"{a3['mean']:>11.2f}{a3['std']:>8.2f}{a3['median']:>8.2f}")
    lines.append(f"(2D in pixels, 3D in mm; std = {STD_CONVENTION} standard deviation)")
    return "\n".join(lines) + "\n"
