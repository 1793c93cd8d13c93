"""One test per acceptance criterion; each records a PASS/FAIL/SKIP line printed at the end of the run."""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
import torch

from probe_sensing import scenegen, selftest, training
from probe_sensing.evaluation import EvalReport, compare_reports
from probe_sensing.geometry import CameraRig, Point3D, back_project, disparity_to_depth, error_2d, error_3d, project
from probe_sensing.model import ImageBranch, ModelConfig

from conftest import ACCEPTANCE_LINES

ROOT = Path(__file__).resolve().parents[1]


def record(number, passed, detail):
    ACCEPTANCE_LINES.append((number, passed, detail))


def test_criterion_1_shape_audit():
    t0 = time.perf_counter()
    mismatches, checked = [], 0
    for base in (8, 16):
        for exp in (2, 4):
            for stages in (0, 1, 2):
                cfg = ModelConfig(base_channels=base, ebn_expansion=exp, decoder_stages=stages)
                branch = ImageBranch(cfg).eval()
                seen = []
                hooks = [b.register_forward_hook(lambda m, i, o: seen.append(tuple(o.shape[1:])))
                         for b in branch.decoder.blocks]
                for size in (64, 256):
                    seen.clear()
                    with torch.no_grad():
                        outs = branch.encoder(torch.zeros(1, 6, size, size))
                        feats = branch.decoder(outs)
                    enc_want = [(base, size // 2, size // 2)] + [
                        (base * exp ** (k + 1), size // 2 ** (k + 2), size // 2 ** (k + 2)) for k in range(4)]
                    top = base * exp ** 4
                    dec_want = [(top // 2 ** (k + 1), size // 2 ** (4 - k), size // 2 ** (4 - k))
                                for k in range(stages)]
                    got = ([tuple(o.shape[1:]) for o in outs], seen, tuple(feats.shape))
                    want = (enc_want, dec_want, (1, top // 2 ** stages))
                    checked += 1
                    if got != want:
                        mismatches.append(((base, exp, stages, size), got, want))
                for h in hooks:
                    h.remove()
                del branch
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 60
    record(1, ok, f"shape audit over {checked} configs x sizes, {len(mismatches)} mismatches, {elapsed:.1f}s")
    assert not mismatches, mismatches[:2]
    assert elapsed < 60


def test_criterion_2_gradient_oracle():
    t0 = time.perf_counter()
    cfg = ModelConfig(base_channels=8, block_counts=(1, 1, 1, 1))
    ok, detail = selftest.gradient_check(np.random.default_rng(0), n_params=300, cfg=cfg)
    elapsed = time.perf_counter() - t0
    record(2, ok and elapsed < 300, f"{detail}, full three-branch loss, {elapsed:.1f}s")
    assert ok, detail
    assert elapsed < 300


def test_criterion_3_geometry_round_trips():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    rig = CameraRig(1000.0, 4.5, 1010.0, 990.0, (612.3, 459.8), (920, 1224))
    worst = 0.0
    for _ in range(10_000):
        q = Point3D(rng.uniform(-80, 80), rng.uniform(-60, 60), rng.uniform(10, 400))
        r = back_project(project(q, rig), q.Z, rig)
        worst = max(worst, max(abs(a - b) / max(abs(b), 1e-12) for a, b in zip(r, q)))
    disp = rng.uniform(0, 100, size=(20, 30))
    disp[rng.random(disp.shape) < 0.1] = 0.0
    small = CameraRig.simple(700.0, 5.0, (20, 30))
    depth = disparity_to_depth(disp, small)
    depth_exact = all(depth[i, j] == (700.0 * 5.0 / disp[i, j] if disp[i, j] > 1e-6 else 0.0)
                      for i in range(20) for j in range(30))
    metrics_exact = True
    for _ in range(1000):
        p, q = rng.uniform(-500, 500, 2), rng.uniform(-500, 500, 2)
        P, Q = rng.uniform(-500, 500, 3), rng.uniform(-500, 500, 3)
        metrics_exact &= error_2d(p, q) == math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2)
        metrics_exact &= error_3d(P, Q) == math.sqrt((P[0] - Q[0]) ** 2 + (P[1] - Q[1]) ** 2 + (P[2] - Q[2]) ** 2)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and depth_exact and metrics_exact and elapsed < 60
    record(3, ok, f"max relative round-trip error {worst:.1e} over 1e4 points, depth exact={depth_exact}, "
                  f"metrics exact={metrics_exact}, {elapsed:.1f}s")
    assert ok


def test_criterion_4_ray_oracle():
    t0 = time.perf_counter()
    ok, detail = selftest.ray_oracle(np.random.default_rng(4), n_scenes=100)
    elapsed = time.perf_counter() - t0
    record(4, ok and elapsed < 120, f"{detail} over 100 sinusoidal scenes, {elapsed:.1f}s")
    assert ok, detail
    assert elapsed < 120


def test_criterion_5_pca_axis():
    t0 = time.perf_counter()
    ok, detail = selftest.pca_axis(np.random.default_rng(5))
    elapsed = time.perf_counter() - t0
    record(5, ok and elapsed < 60, f"{detail} at 0..75 deg, disc raises ambiguous-axis, {elapsed:.1f}s")
    assert ok, detail


@pytest.mark.slow
def test_criterion_6_overfit_probe(scene_spec, samples):
    t0 = time.perf_counter()
    eight = list(samples) + [scenegen.generate_sample(scene_spec, s, f"s{s:03d}") for s in range(len(samples), 8)]
    cfg = ModelConfig(base_channels=16, ebn_expansion=2)
    res = training.overfit_probe(cfg, eight, steps=300, seed=0, target_size=256)
    elapsed = time.perf_counter() - t0
    ok = res.final_error < 10.0 and elapsed < 900
    record(6, ok, f"mean training 2D error {res.initial_error:.2f} -> {res.final_error:.3f} px after 300 steps "
                  f"(threshold 10), {elapsed:.0f}s")
    assert res.final_error < 10.0
    assert elapsed < 900


def test_criterion_7_determinism(tmp_path, dataset_dir):
    mcfg = ModelConfig(base_channels=8, block_counts=(1, 1, 1, 1), ebn_expansion=2, head_hidden_sizes=(16,))
    tcfg = training.TrainConfig(batch_size=4, epochs=3, target_size=64, seed=0)
    losses = lambda recs: [r["train_loss"] for r in recs]  # noqa: E731
    a = training.train(mcfg, tcfg, dataset_dir, tmp_path / "a")
    b = training.train(mcfg, tcfg, dataset_dir, tmp_path / "b")
    head = training.train(mcfg, tcfg, dataset_dir, tmp_path / "c", stop_after_epoch=1)
    tail = training.train(mcfg, tcfg, dataset_dir, tmp_path / "c", resume=tmp_path / "c" / "last.pt")
    same = losses(a) == losses(b)
    resumed = losses(head + tail) == losses(a)
    record(7, same and resumed, f"identical loss logs across runs={same}, resume after epoch 1 exact={resumed}")
    assert same and resumed


def test_criterion_8_report_arithmetic():
    def report(m2, m3):
        agg = {"2d": {"mean": m2, "std": 0.0, "median": m2}, "3d": {"mean": m3, "std": 0.0, "median": m3}}
        return EvalReport([{"sample_id": "x"}], agg, "test")
    d = compare_reports(report(55.2, 6.0), report(43.0, 3.5))
    ok = abs(d["2d_mean"] - (-22.10)) <= 0.01 and abs(d["3d_mean"] - (-41.67)) <= 0.01
    record(8, ok, f"2D mean 55.2 -> 43.0 gives {d['2d_mean']:.2f}%, 3D mean 6.0 -> 3.5 gives {d['3d_mean']:.2f}%")
    assert ok


def test_criterion_9_scaled_ablation(tmp_path):
    """Report-only. Runs the 200/50/50 ablation when PROBE_SENSING_ABLATION=1 (about 30 minutes on one core)."""
    if os.environ.get("PROBE_SENSING_ABLATION") != "1":
        stored = ROOT / "notebooks" / "ablation_results" / "table.txt"
        note = f"stored result in {stored.relative_to(ROOT)}" if stored.exists() else "no stored result"
        record(9, None, f"non-binding ablation not run (set PROBE_SENSING_ABLATION=1, ~30 min); {note}")
        pytest.skip("scaled ablation is opt-in")
    import runpy
    ablation = runpy.run_path(str(ROOT / "notebooks" / "ablation.py"), run_name="ablation")
    summary = ablation["run_ablation"](tmp_path)
    record(9, True, f"ran; image-only {summary['image_only']:.2f} px vs fusion {summary['fusion']:.2f} px "
                    f"validation 2D mean (trend logged, not asserted)")
