"""Command-line entry point for the detection pipeline.

Subcommands: synth, augment, tile, train, predict, cluster, eval, roc.
Flag values can come from a JSON file via --config; explicit flags win.
Exit codes: 0 success, 2 config error, 3 data error, 4 numeric error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import data as dp
from .autodiff import NumericError
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .data import DataError
from .losses import LossConfig
from .metrics import (DEFAULT_MATCH_RADIUS, default_tau_grid, evaluate_masks,
                      roc_sweep_multi)
from .model import ConfigError, ModelConfig, TinyShipNet
from .postprocess import adaptive_threshold, cluster8, threshold
from .train import dataset_iou, train as run_train


def _atomic_write_text(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj):
    _atomic_write_text(Path(path), json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _echo_config(out_dir: Path, args: argparse.Namespace):
    resolved = {k: v for k, v in sorted(vars(args).items())
                if k != "func" and not k.startswith("_")}
    _write_json(out_dir / "run_config.json", resolved)


def _load_scenes(manifest_path: str, split: str | None = None) -> list[dp.Scene]:
    manifest = dp.read_manifest(manifest_path)
    root = Path(manifest_path).parent
    entries = [e for e in manifest if split is None or e.get("split", "train") == split]
    if not entries:
        raise DataError(f"no scenes in {manifest_path} for split={split}")
    return [dp.load_scene(e, root) for e in entries]


def _pred_gt_pairs(pred_dir: str, gt_dir: str):
    preds = sorted(Path(pred_dir).glob("*.png"))
    if not preds:
        raise DataError(f"no probability maps in {pred_dir}")
    pairs = []
    for p in preds:
        g = Path(gt_dir) / p.name
        if not g.exists():
            raise DataError(f"missing ground-truth mask {g}")
        pairs.append((p, g))
    return pairs


# ---------------------------------------------------------------------------
# Subcommands


def _synth_one(payload):
    seed, index, size, targets, noise = payload
    return dp._make_scene(size, targets, noise, dp.scene_seed(seed, index),
                          f"scene_{index:04d}")


def cmd_synth(args):
    out = Path(args.out)
    targets = dp.TargetSpec(count_range=(args.min_targets, args.max_targets))
    noise = dp.NoiseSpec()
    payloads = [(args.seed, i, args.size, targets, noise)
                for i in range(args.count)]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            scenes = list(pool.map(_synth_one, payloads))
    else:
        scenes = [_synth_one(p) for p in payloads]
    entries = [dp.save_scene_files(sc, out, split=args.split) for sc in scenes]
    dp.write_manifest(out / "manifest.json", entries)
    _echo_config(out, args)
    print(f"wrote {len(scenes)} scenes to {out}")


def cmd_augment(args):
    out = Path(args.out)
    scenes = _load_scenes(args.manifest)
    cfg = dp.CrrpConfig(paste_count=args.paste_count,
                        scale_range=(args.scale_min, args.scale_max),
                        margin=args.margin,
                        min_separation=args.min_separation)
    entries = []
    for i, sc in enumerate(scenes):
        regions = cluster8(sc.mask)
        aug, log = dp.crrp(sc, regions, cfg,
                           seed=int(np.random.SeedSequence((args.seed, i))
                                    .generate_state(1)[0]))
        entries.append(dp.save_scene_files(aug, out))
        _write_json(out / f"{sc.id}.paste.json", log)
    dp.write_manifest(out / "manifest.json", entries)
    _echo_config(out, args)
    print(f"augmented {len(scenes)} scenes into {out}")


def cmd_tile(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    raster = dp.load_image(args.image)
    ts = dp.tile(raster, args.tile_size)
    meta = {"source_shape": list(ts.source_shape), "tile_size": ts.tile_size,
            "pad_bottom": ts.pad_bottom, "pad_right": ts.pad_right,
            "tiles": []}
    for r0, c0, t in ts.tiles:
        name = f"tile_{r0:06d}_{c0:06d}.png"
        dp.save_image(out / name, t)
        meta["tiles"].append({"origin": [r0, c0], "path": name})
    _write_json(out / "tileset.json", meta)
    _echo_config(out, args)
    print(f"wrote {len(ts.tiles)} tiles to {out}")


def cmd_train(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scenes = _load_scenes(args.manifest, split="train")
    if args.model_config:
        cfg = ModelConfig.from_json(Path(args.model_config).read_text())
    else:
        size = scenes[0].image.shape[0]
        cfg = ModelConfig(k=2, channels=(4, 8), stem_channels=4,
                          heads_per_level=(2,), input_size=size, seed=args.seed)
    model = TinyShipNet(cfg)
    loss_cfg = LossConfig(gamma=args.gamma, smooth=args.smooth)
    log = run_train(model, scenes, steps=args.steps, batch_size=args.batch,
                    base_rate=args.lr, loss_name=args.loss,
                    loss_config=loss_cfg, seed=args.seed)
    save_checkpoint(out / "checkpoint.mtuw", model.state_arrays(), cfg.to_dict())
    _atomic_write_text(out / "train_log.csv", log.to_csv())
    final_iou = dataset_iou(model, scenes)
    _write_json(out / "train_summary.json",
                {"steps": args.steps, "final_loss": log.losses[-1],
                 "train_iou": final_iou})
    _echo_config(out, args)
    print(f"trained {args.steps} steps, train IoU {final_iou:.4f}")


def _predict_scene(model: TinyShipNet, image: np.ndarray) -> np.ndarray:
    size = model.config.input_size
    if image.shape == (size, size):
        return model.predict(dp.normalize(image)[None])
    ts = dp.tile(image, size)
    prob_tiles = [(r0, c0, model.predict(dp.normalize(t)[None]))
                  for r0, c0, t in ts.tiles]
    prob_ts = dp.TileSet(ts.source_shape, ts.tile_size, ts.pad_bottom,
                         ts.pad_right, prob_tiles)
    return dp.stitch(prob_ts, dtype=np.float64)


def cmd_predict(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    named, cfg_dict = load_checkpoint(args.checkpoint)
    model = TinyShipNet(ModelConfig.from_dict(cfg_dict))
    model.load_state_arrays(named)
    scenes = _load_scenes(args.manifest)
    for sc in scenes:
        prob = _predict_scene(model, sc.image)
        dp.save_prob_map(out / f"{sc.id}.png", prob)
        if args.raw:
            np.save(out / f"{sc.id}.npy", prob.astype(np.float32))
    _echo_config(out, args)
    print(f"wrote {len(scenes)} probability maps to {out}")


def _resolve_tau(args, prob: np.ndarray) -> float:
    return adaptive_threshold(prob) if args.adaptive_tau else args.tau


def cmd_cluster(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    preds = sorted(Path(args.pred_dir).glob("*.png"))
    if not preds:
        raise DataError(f"no probability maps in {args.pred_dir}")
    for p in preds:
        prob = dp.load_prob_map(p)
        tau = _resolve_tau(args, prob)
        regions = cluster8(threshold(prob, tau))
        _write_json(out / f"{p.stem}.regions.json",
                    {"id": p.stem, "tau": tau,
                     "regions": [r.to_json_dict() for r in regions]})
    _echo_config(out, args)
    print(f"clustered {len(preds)} maps into {out}")


def cmd_eval(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _pred_gt_pairs(args.pred_dir, args.gt_dir)
    per_image = {}
    t_correct = t_all = p_false = p_all = inter = union = 0
    for p, g in pairs:
        prob = dp.load_prob_map(p)
        gt = dp.load_mask(g)
        rep = evaluate_masks(gt, threshold(prob, _resolve_tau(args, prob)),
                             args.d_thresh)
        per_image[p.stem] = rep.to_json_dict()
        t_correct += rep.t_correct
        t_all += rep.t_all
        p_false += rep.p_false
        p_all += rep.p_all
        inter += rep.inter
        union += rep.union
    report = {"pd": t_correct / t_all, "fa": p_false / p_all,
              "iou": inter / union if union else 1.0,
              "t_correct": t_correct, "t_all": t_all,
              "p_false": p_false, "p_all": p_all,
              "d_thresh": args.d_thresh, "per_image": per_image}
    _write_json(out / "report.json", report)
    _echo_config(out, args)
    print(json.dumps({k: report[k] for k in ("pd", "fa", "iou")}))


def cmd_roc(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pairs = _pred_gt_pairs(args.pred_dir, args.gt_dir)
    probs = [dp.load_prob_map(p) for p, _ in pairs]
    gts = [dp.load_mask(g) for _, g in pairs]
    curve = roc_sweep_multi(probs, gts, default_tau_grid(args.tau_points),
                            args.d_thresh)
    _atomic_write_text(out / "roc.csv", curve.to_csv())
    for name, csv in curve.projections().items():
        _atomic_write_text(out / f"roc_{name}.csv", csv)
    _echo_config(out, args)
    print(f"wrote ROC curves ({args.tau_points} points) to {out}")


# ---------------------------------------------------------------------------
# Parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tinyship",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON file of flag defaults")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("synth", help="generate synthetic scenes")
    common(p)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--min-targets", type=int, default=1)
    p.add_argument("--max-targets", type=int, default=4)
    p.add_argument("--split", default="train")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="copy-rotate-resize-paste augmentation")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--paste-count", type=int, default=2)
    p.add_argument("--scale-min", type=float, default=0.8)
    p.add_argument("--scale-max", type=float, default=1.2)
    p.add_argument("--margin", type=int, default=4)
    p.add_argument("--min-separation", type=int, default=4)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("tile", help="cut a raster into a tile grid")
    common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--tile-size", type=int, default=1024)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("train", help="train a model on a manifest")
    common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--model-config", help="JSON model configuration file")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--batch", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--loss", choices=("focaliou", "focal", "softiou"),
                   default="focaliou")
    p.add_argument("--gamma", type=float, default=2.0)
    p.add_argument("--smooth", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="run inference, write probability maps")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--raw", action="store_true",
                   help="also dump float32 .npy maps")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cluster", help="threshold and extract target regions")
    common(p)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--adaptive-tau", action="store_true")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("eval", help="detection report against ground truth")
    common(p)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--adaptive-tau", action="store_true")
    p.add_argument("--d-thresh", type=float, default=DEFAULT_MATCH_RADIUS)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("roc", help="ROC sweep over a tau grid")
    common(p)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--tau-points", type=int, default=101)
    p.add_argument("--d-thresh", type=float, default=DEFAULT_MATCH_RADIUS)
    p.set_defaults(func=cmd_roc)

    return parser


def _apply_config_file(parser, argv):
    """Use a --config JSON file as flag defaults; explicit flags override."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config")
    known, _ = probe.parse_known_args(argv[1:] if argv else [])
    if not known.config:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config file: {e}") from e
    if not isinstance(cfg, dict):
        raise ConfigError("config file must hold a JSON object")
    subcommand = argv[0] if argv else None
    for action in parser._subparsers._group_actions[0].choices.items():
        name, sp = action
        if name == subcommand:
            dests = {a.dest for a in sp._actions}
            unknown = set(cfg) - dests
            if unknown:
                raise ConfigError(f"unknown config keys: {sorted(unknown)}")
            sp.set_defaults(**cfg)
    return parser.parse_args(argv)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
        args.func(args)
        return 0
    except (ConfigError, CheckpointError) as e:
        _fail("config", e)
        return 2
    except DataError as e:
        _fail("data", e)
        return 3
    except NumericError as e:
        _fail("numeric", e)
        return 4


def _fail(kind: str, err: Exception):
    print(json.dumps({"error": {"type": kind, "message": str(err)}}),
          file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
