# %% [markdown]
# # Scaled ablation: image-only vs three-branch fusion
#
# A desk-scale version of the branch ablation. We render a 200/50/50 synthetic
# dataset, train the image-only network and the full image + depth + axis
# network with the same seed for 50 epochs, and compare the best-by-validation
# checkpoints on the validation and test splits.
#
# The trend (fusion at or below image-only error) is reported, never asserted:
# the axis cue alone is not guaranteed to help.
#
# Run with `python notebooks/ablation.py [out_dir]`; results land in
# `notebooks/ablation_results/` by default.

# %%
import json
import sys
import time
from pathlib import Path

from probe_sensing import evaluation, scenegen, training
from probe_sensing.model import ModelConfig

COUNTS = {"train": 200, "val": 50, "test": 50}
EPOCHS = 50
SEED = 0
CONFIGS = {
    "image_only": ("image",),
    "fusion": ("image", "depth", "axis"),
}


# %%
def run_ablation(out_dir, counts=COUNTS, epochs=EPOCHS, seed=SEED):
    out_dir = Path(out_dir)
    data = out_dir / "data"
    t0 = time.perf_counter()
    if not (data / "manifest.json").exists():
        scenegen.generate_dataset(scenegen.SceneSpec(), counts, data, seed=seed)
    print(f"dataset ready in {time.perf_counter() - t0:.0f}s")

    reports = {}
    for name, branches in CONFIGS.items():
        run = out_dir / name
        mcfg = ModelConfig(base_channels=16, ebn_expansion=2, branches=branches)
        tcfg = training.TrainConfig(epochs=epochs, seed=seed)
        t1 = time.perf_counter()
        if not (run / "last.pt").exists():
            training.train(mcfg, tcfg, data, run)
        print(f"{name}: trained in {time.perf_counter() - t1:.0f}s")
        for split in ("val", "test"):
            reports[name, split] = evaluation.evaluate(run / "best.pt", data, split, run / f"eval_{split}",
                                                       overlays=split == "test")

    # one table row per branch set, then the percentage change between them
    lines = []
    for split in ("val", "test"):
        rows = [(name, CONFIGS[name], reports[name, split]) for name in CONFIGS]
        lines.append(f"split: {split}\n" + evaluation.format_table(rows))
        deltas = evaluation.compare_reports(reports["image_only", split], reports["fusion", split])
        lines.append("change image-only -> fusion\n" + evaluation.format_delta_table(deltas))
    summary = {
        "image_only": reports["image_only", "val"].aggregates["2d"]["mean"],
        "fusion": reports["fusion", "val"].aggregates["2d"]["mean"],
    }
    trend = "holds" if summary["fusion"] <= summary["image_only"] else "does not hold"
    lines.append(f"expected trend (fusion <= image-only validation 2D mean) {trend}\n")
    text = "\n".join(lines)
    (out_dir / "table.txt").write_text(text)
    (out_dir / "summary.json").write_text(json.dumps(
        {**summary, "trend_holds": trend == "holds", "counts": counts, "epochs": epochs, "seed": seed,
         "seconds": time.perf_counter() - t0}, indent=1))
    print(text)
    return summary


# %%
if __name__ == "__main__":
    target = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent / "ablation_results"
    run_ablation(target)
