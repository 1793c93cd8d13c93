"""Command-line entry point: ``probe-sensing {gen,train,eval,predict,selftest}``.

Configuration precedence: built-in defaults < ``--config`` JSON file < flags.
A ``run.json`` written by any command can be passed back as ``--config``.
Exit codes: 0 success, 1 internal failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import __version__, dataio, evaluation, scenegen, selftest, training
from .checkpoint import load_checkpoint
from .geometry import CameraRig, back_project
from .model import BRANCHES, ModelConfig

log = logging.getLogger("probe_sensing")


class UsageError(Exception):
    pass


def _branches(text):
    names = tuple(b.strip() for b in text.split(",") if b.strip())
    bad = [b for b in names if b not in BRANCHES]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"branches must be a comma list from {','.join(BRANCHES)}")
    return ",".join(names)


def _int_list(text):
    try:
        return [int(x) for x in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


COMMON = [
    (("--config",), dict(default=None, help="flat JSON config file (or a previous run.json)")),
    (("--seed",), dict(type=int, default=0, help="random seed")),
]

DESK_MODEL = dict(base_channels=16, expansion=2, decoder_stages=2, block_counts="3,4,6,3", head_hidden="256,64")

COMMANDS = {
    "gen": ("generate a synthetic dataset", [
        (("--out",), dict(default=None, help="dataset output directory (required)")),
        (("--train",), dict(type=int, default=8, help="number of training samples")),
        (("--val",), dict(type=int, default=2, help="number of validation samples")),
        (("--test",), dict(type=int, default=2, help="number of test samples")),
        (("--image-height",), dict(type=int, default=192, help="rendered image height in pixels")),
        (("--image-width",), dict(type=int, default=256, help="rendered image width in pixels")),
        (("--focal-px",), dict(type=float, default=200.0, help="focal length in pixels")),
        (("--baseline-mm",), dict(type=float, default=4.5, help="stereo baseline in mm")),
        (("--workers",), dict(type=int, default=1, help="parallel generator processes")),
    ]),
    "train": ("train a model", [
        (("--data",), dict(default=None, help="dataset directory (required)")),
        (("--out",), dict(default=None, help="run directory (default: <data>/train_run)")),
        (("--epochs",), dict(type=int, default=50, help="training epochs")),
        (("--batch-size",), dict(type=int, default=8, help="mini-batch size")),
        (("--target-size",), dict(type=int, default=256, help="network input size (square, multiple of 32)")),
        (("--branches",), dict(type=_branches, default="image,depth,axis", help="enabled branches")),
        (("--base-channels",), dict(type=int, default=DESK_MODEL["base_channels"], help="stem channel width")),
        (("--expansion",), dict(type=int, choices=(2, 4), default=DESK_MODEL["expansion"],
                                help="expanded-bottleneck channel factor")),
        (("--block-counts",), dict(type=_int_list, default=DESK_MODEL["block_counts"],
                                   help="blocks per residual module")),
        (("--decoder-stages",), dict(type=int, default=DESK_MODEL["decoder_stages"], help="decoder upsampling stages")),
        (("--head-hidden",), dict(type=_int_list, default=DESK_MODEL["head_hidden"], help="fusion MLP hidden sizes")),
        (("--lr-initial",), dict(type=float, default=1e-4, help="learning rate at the first epoch")),
        (("--lr-final",), dict(type=float, default=8e-5, help="learning rate at the last epoch")),
        (("--loss-space",), dict(choices=training.LOSS_SPACES, default="normalized", help="loss coordinate space")),
        (("--checkpoint-every",), dict(type=int, default=1, help="epochs between last.pt saves")),
        (("--resume",), dict(default=None, help="checkpoint to resume from")),
    ]),
    "eval": ("evaluate a checkpoint on a split", [
        (("--data",), dict(default=None, help="dataset directory (required)")),
        (("--split",), dict(choices=("train", "val", "test"), default="test", help="split to evaluate")),
        (("--checkpoint",), dict(default=None, help="checkpoint file (required)")),
        (("--out",), dict(default=None, help="report directory (default: <checkpoint dir>/eval_<split>)")),
        (("--no-overlays",), dict(action="store_true", default=False, help="skip overlay PNGs")),
    ]),
    "predict": ("predict the sensing point for one sample", [
        (("--data",), dict(default=None, help="dataset directory (required)")),
        (("--split",), dict(choices=("train", "val", "test"), default="test", help="split holding the sample")),
        (("--sample-id",), dict(default=None, help="sample id (default: first sample of the split)")),
        (("--checkpoint",), dict(default=None, help="checkpoint file (required)")),
        (("--out",), dict(default=None, help="output directory (default: <checkpoint dir>/predict)")),
        (("--overlay",), dict(action="store_true", default=False, help="also write an overlay PNG")),
    ]),
    "selftest": ("run the oracle self-test suites", [
        (("--out",), dict(default="selftest_out", help="directory for run.json")),
    ]),
}


def _key(flags):
    return flags[0].lstrip("-").replace("-", "_")


def build_parser(suppress_defaults=False):
    parser = argparse.ArgumentParser(
        prog="probe-sensing",
        description="Sensing-area prediction for a drop-in gamma probe on synthetic stereo scenes.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--log-level", default="INFO", help="logging level")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (help_text, options) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        for flags, kwargs in COMMON + options:
            kwargs = dict(kwargs)
            if suppress_defaults:
                kwargs["default"] = argparse.SUPPRESS
            p.add_argument(*flags, **kwargs)
    return parser


def resolve_config(argv):
    """Parse ``argv`` into (command, resolved config dict)."""
    args = build_parser().parse_args(argv)
    explicit = vars(build_parser(suppress_defaults=True).parse_args(argv))
    command = args.command
    cfg = {_key(f): kw["default"] for f, kw in COMMON + COMMANDS[command][1]}
    cfg["config"] = None
    if args.config:
        path = Path(args.config)
        try:
            loaded = json.loads(path.read_text())
        except (OSError, ValueError) as e:
            raise UsageError(f"cannot read config {path}: {e}") from None
        if isinstance(loaded, dict) and "command" in loaded and "config" in loaded:
            loaded = loaded["config"]
        if not isinstance(loaded, dict):
            raise UsageError(f"config {path} must be a JSON object")
        unknown = sorted(set(loaded) - set(cfg))
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {unknown}")
        cfg.update(loaded)
    for k, v in explicit.items():
        if k in cfg:
            cfg[k] = v
    cfg["config"] = args.config
    for k in ("block_counts", "head_hidden"):
        if k in cfg and isinstance(cfg[k], str):
            cfg[k] = _int_list(cfg[k])
    return command, cfg, args.log_level


def _require(cfg, *keys):
    for k in keys:
        if cfg.get(k) in (None, ""):
            raise UsageError(f"--{k.replace('_', '-')} is required")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {p} does not exist")
    return p


def model_config_from(cfg):
    return ModelConfig(
        base_channels=cfg["base_channels"],
        block_counts=tuple(cfg["block_counts"]),
        ebn_expansion=cfg["expansion"],
        branches=tuple(cfg["branches"].split(",")),
        decoder_stages=cfg["decoder_stages"],
        head_hidden_sizes=tuple(cfg["head_hidden"]),
    )


def cmd_gen(cfg):
    _require(cfg, "out")
    rig = CameraRig.simple(cfg["focal_px"], cfg["baseline_mm"], (cfg["image_height"], cfg["image_width"]))
    spec = scenegen.SceneSpec(rig=rig)
    counts = {"train": cfg["train"], "val": cfg["val"], "test": cfg["test"]}
    manifest = scenegen.generate_dataset(spec, counts, cfg["out"], seed=cfg["seed"], workers=cfg["workers"])
    print(f"wrote {sum(manifest.counts.values())} samples to {cfg['out']}")
    return Path(cfg["out"]), {"counts": manifest.counts}


def cmd_train(cfg):
    _require(cfg, "data")
    data = _existing(cfg["data"], "dataset")
    out = Path(cfg["out"] or data / "train_run")
    train_cfg = training.TrainConfig(
        batch_size=cfg["batch_size"], epochs=cfg["epochs"], lr_initial=cfg["lr_initial"],
        lr_final=cfg["lr_final"], seed=cfg["seed"], checkpoint_every=cfg["checkpoint_every"],
        target_size=cfg["target_size"], loss_space=cfg["loss_space"],
    )
    resume = _existing(cfg["resume"], "checkpoint") if cfg["resume"] else None
    records = training.train(model_config_from(cfg), train_cfg, data, out, resume=resume)
    last = records[-1] if records else {}
    print(f"trained {len(records)} epochs; last val 2D mean {last.get('val_2d_mean', float('nan')):.2f} px; "
          f"checkpoints in {out}")
    return out, {"epochs_run": len(records), "last": last}


def cmd_eval(cfg):
    _require(cfg, "data", "checkpoint")
    ckpt = _existing(cfg["checkpoint"], "checkpoint")
    data = _existing(cfg["data"], "dataset")
    out = Path(cfg["out"] or ckpt.parent / f"eval_{cfg['split']}")
    report = evaluation.evaluate(ckpt, data, cfg["split"], report_dir=out, overlays=not cfg["no_overlays"])
    print(evaluation.format_table([(ckpt.stem, report.config["branches"], report)]), end="")
    print(f"{len(report.per_sample)} samples, {report.n_depth_missing} without depth; report in {out}")
    return out, {"aggregates": report.aggregates}


def cmd_predict(cfg):
    _require(cfg, "data", "checkpoint")
    ckpt = _existing(cfg["checkpoint"], "checkpoint")
    data = _existing(cfg["data"], "dataset")
    out = Path(cfg["out"] or ckpt.parent / "predict")
    manifest = dataio.load_manifest(data)
    ids = manifest.splits.get(cfg["split"], [])
    sample_id = cfg["sample_id"] or (ids[0] if ids else None)
    if sample_id not in ids:
        raise UsageError(f"sample {sample_id!r} is not in split {cfg['split']!r}")
    sample = dataio.load_sample(data / "samples" / sample_id)
    model, payload = load_checkpoint(ckpt)
    target = (payload.get("train_config") or {}).get("target_size", dataio.DEFAULT_TARGET_SIZE)
    batch = dataio.make_batch([sample], target, payload.get("norm_stats") or manifest.norm_stats)
    pred = evaluation.predict_pixels(model, batch)[0]
    row = evaluation.score_sample(sample, pred)
    try:
        pred_3d = list(back_project(tuple(pred), sample.depth, sample.rig))
    except ValueError:
        pred_3d = None
    print(f"{sample_id}: pred 2D ({pred[0]:.2f}, {pred[1]:.2f}) px, "
          f"pred 3D {None if pred_3d is None else tuple(round(c, 2) for c in pred_3d)} mm, "
          f"2D error {row['err_2d_px']:.2f} px")
    out.mkdir(parents=True, exist_ok=True)
    if cfg["overlay"]:
        img, _ = evaluation.render_overlay(sample.left_image, sample.gt_2d, pred)
        evaluation.save_overlay(img, out / f"{sample_id}.png")
    (out / "prediction.json").write_text(json.dumps(row, indent=1, sort_keys=True))
    return out, {"prediction": row}


def cmd_selftest(cfg):
    results = selftest.run_all(seed=cfg["seed"])
    failed = [k for k, v in results.items() if not v["passed"]]
    if failed:
        print(f"{len(failed)} suite(s) failed: {', '.join(failed)}")
    else:
        print(f"all {len(results)} suites passed")
    return Path(cfg["out"]), {"results": results, "failed": failed}


HANDLERS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "selftest": cmd_selftest}


def write_run_record(out, command, cfg, argv, started, outcome):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config": cfg,
        "seed": cfg.get("seed"),
        "argv": list(argv),
        "versions": {
            "probe_sensing": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "torch": torch.__version__,
        },
        "timing": {"started": started, "seconds": time.time() - started},
        "outcome": outcome,
    }
    path = out / "run.json"
    path.write_text(json.dumps(record, indent=1, sort_keys=True, default=str))
    return path


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        command, cfg, level = resolve_config(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:  # argparse already printed its message
        return int(e.code or 0)
    logging.basicConfig(level=getattr(logging, str(level).upper(), logging.INFO), format="%(levelname)s %(message)s")
    started = time.time()
    try:
        out, outcome = HANDLERS[command](cfg)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1
    write_run_record(out, command, cfg, argv, started, outcome)
    if command == "selftest" and outcome["failed"]:
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
