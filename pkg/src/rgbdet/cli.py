"""Command-line interface.

Subcommands: ``synth``, ``pretrain``, ``finetune``, ``detect``, ``eval``,
``ablate``, ``gradcheck``.  Every command accepts ``--config`` (YAML, see
:mod:`rgbdet.config`); explicit flags override file values.  Exit codes:
0 success, 1 a verification check failed, 2 usage/config/data errors.

Outputs land in a per-run directory ``<out-root>/<command>-<timestamp>-
seed<seed>`` (override the root with ``--out-root`` or the
``RGBDET_OUTPUT_ROOT`` environment variable, or pin the exact directory
with ``--run-dir``).  A fully-resolved ``config.yaml`` snapshot is written
next to every output.  ``synth`` writes only to its ``--out`` dataset
directory so identical invocations produce identical trees.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import CheckpointError, read_checkpoint, write_checkpoint
from .config import (
    ConfigError,
    RunConfig,
    config_from_dict,
    load_config,
    save_config_snapshot,
)
from .data import (
    DatasetError,
    load_annotated_frames,
    load_annotations,
    load_sequences,
    save_annotations,
    save_sequences,
)
from .detector import build_detector, detection_loss
from .evaluation import COCO_THRESHOLDS, evaluate, write_metrics_csv
from .gradcheck import grad_check_model
from .losses import RepBatch, loss_mcl
from .network import EncoderPair
from .pipeline import (
    detect_frames,
    detector_from_state,
    finetune,
    load_detections,
    pretrain,
    run_ablation,
    save_detections,
)
from .synthetic import generate_synthetic


def _resolve_run_dir(args, command: str, seed: int) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        root = Path(args.out_root or os.environ.get("RGBDET_OUTPUT_ROOT", "runs"))
        stamp = time.strftime("%Y%m%d-%H%M%S")
        base = root / f"{command}-{stamp}-seed{seed}"
        run_dir = base
        suffix = 1
        while run_dir.exists():
            run_dir = base.with_name(f"{base.name}-{suffix}")
            suffix += 1
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _overrides(pairs: list[tuple[str, object]]) -> dict:
    """[('pretrain.epochs', 3), ...] with None values dropped -> nested dict."""
    out: dict = {}
    for dotted, value in pairs:
        if value is None:
            continue
        node = out
        keys = dotted.split(".")
        for key in keys[:-1]:
            node = node.setdefault(key, {})
        node[keys[-1]] = value
    return out


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="YAML config file (flags override it)")
    sub.add_argument("--out-root", help="root directory for run outputs")
    sub.add_argument("--run-dir", help="exact output directory (overrides --out-root)")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = load_config(
        args.config,
        _overrides(
            [
                ("synth.num_sequences", args.sequences),
                ("synth.frames_per_sequence", args.frames),
                ("synth.num_actors", args.actors),
                ("synth.occluder_density", args.occluder_density),
                ("synth.lighting_amplitude", args.lighting_amplitude),
                ("synth.image_size", args.size),
                ("synth.seed", args.seed),
            ]
        ),
    )
    dataset, annotations = generate_synthetic(cfg.synth, split=args.split)
    out = Path(args.out)
    save_sequences(dataset, out)
    save_annotations(annotations, out, args.split)
    save_config_snapshot(cfg, out / args.split / "config.yaml")
    boxes = sum(len(b) for b in annotations.values())
    print(
        f"wrote {dataset.num_sequences} sequences / {dataset.num_frames} frames "
        f"/ {boxes} boxes to {out / args.split}"
    )
    return 0


def cmd_pretrain(args) -> int:
    cfg = load_config(
        args.config,
        _overrides(
            [
                ("pretrain.epochs", args.epochs),
                ("pretrain.steps_per_epoch", args.steps_per_epoch),
                ("pretrain.batch_size", args.batch_size),
                ("pretrain.optimizer", args.optimizer),
                ("pretrain.lr", args.lr),
                ("pretrain.pairing_mode", args.pairing_mode),
                ("pretrain.batch_sampling", args.batch_sampling),
                ("pretrain.fuse_at", args.fuse_at),
                ("pretrain.ema_momentum", args.ema_momentum),
                ("pretrain.seed", args.seed),
                ("pretrain.crossmodal_enabled", None if args.crossmodal is None else args.crossmodal == "on"),
                ("sampler.delta_t", args.delta_t),
            ]
        ),
    )
    dataset = load_sequences(args.data, args.split)
    run_dir = _resolve_run_dir(args, "pretrain", cfg.pretrain.seed)
    save_config_snapshot(cfg, run_dir / "config.yaml")
    result = pretrain(dataset, cfg, log_path=run_dir / "train_log.csv")
    ckpt_path = run_dir / "encoder.ckpt"
    write_checkpoint(result.state, ckpt_path)
    final = result.history[-1]["loss_mcl"] if result.history else float("nan")
    print(f"pretrained {result.state.meta['step']} steps, final loss {final:.4f}")
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_finetune(args) -> int:
    cfg = load_config(
        args.config,
        _overrides(
            [
                ("finetune.epochs", args.epochs),
                ("finetune.steps_per_epoch", args.steps_per_epoch),
                ("finetune.batch_size", args.batch_size),
                ("finetune.lr", args.lr),
                ("finetune.init_mode", args.init_mode),
                ("finetune.seed", args.seed),
                ("finetune.eval_every", args.eval_every),
                ("finetune.early_stop_ap50", args.early_stop_ap50),
            ]
        ),
    )
    frames = load_annotated_frames(args.data, args.split)
    encoder_state = read_checkpoint(args.encoder) if args.encoder else None
    if cfg.finetune.init_mode == "timclr" and encoder_state is None:
        raise ConfigError('init_mode "timclr" requires --encoder <pretraining checkpoint>')
    run_dir = _resolve_run_dir(args, "finetune", cfg.finetune.seed)
    save_config_snapshot(cfg, run_dir / "config.yaml")
    result = finetune(frames, encoder_state, cfg, log_path=run_dir / "train_log.csv")
    ckpt_path = run_dir / "detector.ckpt"
    write_checkpoint(result.state, ckpt_path)
    final = result.history[-1]["loss"] if result.history else float("nan")
    msg = f"finetuned {result.state.meta['step']} steps, final loss {final:.4f}"
    if result.steps_to_target is not None:
        msg += f", reached AP50 target at step {result.steps_to_target}"
    print(msg)
    print(f"checkpoint: {ckpt_path}")
    return 0


def cmd_detect(args) -> int:
    state = read_checkpoint(args.checkpoint)
    try:
        cfg = config_from_dict(state.meta["config"])
    except KeyError:
        raise CheckpointError("checkpoint carries no config snapshot") from None
    det_overrides = {}
    if args.conf_threshold is not None:
        det_overrides["conf_threshold"] = args.conf_threshold
    if args.nms_iou is not None:
        det_overrides["nms_iou"] = args.nms_iou
    if det_overrides:
        cfg = replace(cfg, detector=replace(cfg.detector, **det_overrides))
    model = detector_from_state(state, cfg)
    frames = load_sequences(args.data, args.split).all_frames()
    run_dir = _resolve_run_dir(args, "detect", cfg.finetune.seed)
    save_config_snapshot(cfg, run_dir / "config.yaml")
    dets = detect_frames(model, frames, cfg)
    out_path = Path(args.out) if args.out else run_dir / "detections.json"
    save_detections(dets, out_path)
    total = sum(len(v) for v in dets.values())
    print(f"wrote {total} detections over {len(frames)} frames to {out_path}")
    return 0


def cmd_eval(args) -> int:
    ground_truth = load_annotations(args.data, args.split)
    detections = load_detections(args.preds)
    thresholds = (
        tuple(float(t) for t in args.thresholds.split(",")) if args.thresholds else COCO_THRESHOLDS
    )
    result = evaluate(detections, ground_truth, thresholds=thresholds, method=args.method)
    run_dir = _resolve_run_dir(args, "eval", 0)
    out_path = Path(args.out) if args.out else run_dir / "metrics.csv"
    write_metrics_csv(result, out_path, dataset=str(args.data), split=args.split)
    print(f"ap50={result.ap50:.4f} ap={result.ap:.4f}")
    print(f"metrics: {out_path}")
    return 0


def cmd_ablate(args) -> int:
    cfg = load_config(
        args.config,
        _overrides(
            [
                ("pretrain.epochs", args.pretrain_epochs),
                ("pretrain.steps_per_epoch", args.pretrain_steps),
                ("finetune.epochs", args.finetune_epochs),
                ("finetune.steps_per_epoch", args.finetune_steps),
                ("pretrain.seed", args.seed),
                ("finetune.seed", args.seed),
            ]
        ),
    )
    pretrain_dataset = load_sequences(args.data, args.pretrain_split)
    train_frames = load_annotated_frames(args.data, args.train_split)
    eval_frames = load_annotated_frames(args.data, args.eval_split)
    run_dir = _resolve_run_dir(args, "ablate", cfg.pretrain.seed)
    save_config_snapshot(cfg, run_dir / "config.yaml")
    rows = run_ablation(cfg, pretrain_dataset, train_frames, eval_frames, run_dir)
    print(f"{'axis':<14}{'variant':<16}{'ap50':>8}{'ap':>8}")
    for row in rows:
        print(f"{row['axis']:<14}{row['variant']:<16}{row['ap50']:>8.4f}{row['ap']:>8.4f}")
    print(f"table: {run_dir / 'ablation.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    from .config import BlockConfig, DetectorConfig, LossConfig
    from .data import BBox

    torch.set_default_dtype(torch.float64)
    try:
        gen = torch.Generator().manual_seed(args.seed)
        rng = np.random.default_rng(args.seed)
        blocks = BlockConfig()

        pair = EncoderPair.create(blocks, seed=args.seed, momentum=0.99)
        pair.query.double()
        pair.key.double()
        rgb1 = torch.rand((4, 3, 32, 32), generator=gen, dtype=torch.float64)
        d1 = torch.rand((4, 1, 32, 32), generator=gen, dtype=torch.float64)
        rgb2 = torch.rand((4, 3, 32, 32), generator=gen, dtype=torch.float64)
        d2 = torch.rand((4, 1, 32, 32), generator=gen, dtype=torch.float64)
        with torch.no_grad():
            k1 = pair.key(rgb1, d1)
            k2 = pair.key(rgb2, d2)
        loss_cfg = LossConfig()

        def contrastive_loss():
            q1 = pair.query(rgb1, d1)
            q2 = pair.query(rgb2, d2)
            return loss_mcl(RepBatch(q1=q1, q2=q2, k1=k1, k2=k2), loss_cfg)[0]

        res_c = grad_check_model(
            pair.query, contrastive_loss, eps=args.eps, num_samples=args.samples, rng=rng
        )
        ok_c = res_c.passed(args.tolerance)
        print(
            f"contrastive loss: max rel err {res_c.max_rel_error:.3e} over "
            f"{res_c.num_coords} of {res_c.num_params} coords "
            f"[{'ok' if ok_c else 'FAIL'}]"
        )

        det_cfg = DetectorConfig(anchors=(((6, 10), (8, 8)), ((10, 6), (12, 12))))
        model = build_detector(blocks, det_cfg, seed=args.seed).double()
        rgb = torch.rand((2, 3, 16, 16), generator=gen, dtype=torch.float64)
        depth = torch.rand((2, 1, 16, 16), generator=gen, dtype=torch.float64)
        targets = [
            [BBox(2.0, 3.0, 10.0, 12.0), BBox(5.0, 1.0, 14.0, 9.0)],
            [BBox(4.0, 4.0, 12.0, 13.0)],
        ]

        def det_loss():
            return detection_loss(model(rgb, depth), targets, det_cfg)[0]

        res_d = grad_check_model(model, det_loss, eps=args.eps, num_samples=args.samples, rng=rng)
        ok_d = res_d.passed(args.tolerance)
        print(
            f"detection loss:   max rel err {res_d.max_rel_error:.3e} over "
            f"{res_d.num_coords} of {res_d.num_params} coords "
            f"[{'ok' if ok_d else 'FAIL'}]"
        )
        return 0 if (ok_c and ok_d) else 1
    finally:
        torch.set_default_dtype(torch.float32)


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rgbdet",
        description="Contrastive RGB-D pretraining and fused multiscale person detection.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("synth", help="generate a synthetic RGB-D dataset with ground truth")
    _add_common(p)
    p.add_argument("--out", required=True, help="dataset root directory to write")
    p.add_argument("--split", default="train")
    p.add_argument("--sequences", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--actors", type=int)
    p.add_argument("--occluder-density", type=float)
    p.add_argument("--lighting-amplitude", type=float)
    p.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_synth)

    p = subs.add_parser("pretrain", help="contrastive pretraining on RGB-D sequences")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--split", default="train")
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--optimizer", choices=["sgd", "adam"])
    p.add_argument("--lr", type=float)
    p.add_argument("--pairing-mode", choices=["augment_only", "temporal_only", "combined"])
    p.add_argument("--batch-sampling", choices=["iid", "distinct_seq"])
    p.add_argument("--fuse-at", choices=["C3", "C4", "C5"])
    p.add_argument("--crossmodal", choices=["on", "off"])
    p.add_argument("--ema-momentum", type=float)
    p.add_argument("--delta-t", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_pretrain)

    p = subs.add_parser("finetune", help="train the detector, optionally from a pretrained encoder")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--encoder", help="pretraining checkpoint path")
    p.add_argument("--init-mode", choices=["timclr", "random"])
    p.add_argument("--epochs", type=int)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--eval-every", type=int)
    p.add_argument("--early-stop-ap50", type=float)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_finetune)

    p = subs.add_parser("detect", help="run a trained detector over a split")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--checkpoint", required=True, help="detector checkpoint path")
    p.add_argument("--out", help="output JSON path (default: <run-dir>/detections.json)")
    p.add_argument("--conf-threshold", type=float)
    p.add_argument("--nms-iou", type=float)
    p.set_defaults(func=cmd_detect)

    p = subs.add_parser("eval", help="score saved detections against ground truth")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--preds", required=True, help="detections JSON from `rgbdet detect`")
    p.add_argument("--out", help="metrics CSV path (default: <run-dir>/metrics.csv)")
    p.add_argument("--thresholds", help="comma-separated IoU thresholds (default 0.50..0.95)")
    p.add_argument("--method", choices=["101pt", "allpoint"], default="101pt")
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("ablate", help="run the pairing/fusion/crossmodal ablation matrix")
    _add_common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pretrain-split", default="train")
    p.add_argument("--train-split", default="train")
    p.add_argument("--eval-split", default="val")
    p.add_argument("--pretrain-epochs", type=int)
    p.add_argument("--pretrain-steps", type=int, help="steps per pretraining epoch")
    p.add_argument("--finetune-epochs", type=int)
    p.add_argument("--finetune-steps", type=int, help="steps per finetuning epoch")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_ablate)

    p = subs.add_parser("gradcheck", help="finite-difference check of both training losses")
    _add_common(p)
    p.add_argument("--eps", type=float, default=1e-4)
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--tolerance", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, DatasetError, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
