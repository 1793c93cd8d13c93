"""
Training on a small synthetic dataset
=====================================

Generate a dataset, train for a few epochs and inspect the log. The loss is
the squared distance between predicted and true normalized coordinates.
"""

import tempfile
from pathlib import Path

from probe_sensing import scenegen, training
from probe_sensing.model import ModelConfig

root = Path(tempfile.mkdtemp())
scenegen.generate_dataset(scenegen.SceneSpec(), {"train": 8, "val": 2, "test": 2}, root / "data", seed=7)

# a deliberately small network so this runs in well under a minute
mcfg = ModelConfig(base_channels=8, block_counts=(1, 1, 1, 1), ebn_expansion=2, head_hidden_sizes=(32,))
tcfg = training.TrainConfig(epochs=3, batch_size=4, target_size=128)
for rec in training.train(mcfg, tcfg, root / "data", root / "run"):
    print(f"epoch {rec['epoch']}  lr {rec['lr']:.2e}  loss {rec['train_loss']:.4f}  val 2D {rec['val_2d_mean']:.1f} px")

print(sorted(p.name for p in (root / "run").iterdir()))

# an interrupted run resumed from last.pt retraces the same losses
first = training.train(mcfg, tcfg, root / "data", root / "again", stop_after_epoch=0)
rest = training.train(mcfg, tcfg, root / "data", root / "again", resume=root / "again" / "last.pt")
uninterrupted = training.read_log(root / "run" / "train_log.jsonl")
print("resume matches:", [r["train_loss"] for r in first + rest] == [r["train_loss"] for r in uninterrupted])

# the overfit probe fits a handful of samples and reports the error before and after
samples = [scenegen.generate_sample(scenegen.SceneSpec(), s) for s in range(4)]
res = training.overfit_probe(mcfg, samples, steps=60, target_size=128, n_samples=4)
print(f"overfit: {res.initial_error:.1f} px -> {res.final_error:.1f} px")
