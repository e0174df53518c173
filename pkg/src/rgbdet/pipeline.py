"""Training pipelines: contrastive pretraining, detector finetuning, the
dataset-level detection/evaluation drivers, and the ablation runner.

Determinism contract: every run derives all randomness from config seeds via
locally constructed generators (no global RNG is read or written), torch
runs single-threaded CPU kernels, and checkpoints serialize canonically --
so identical config + data yields byte-identical checkpoint files.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .augment import apply, identity_transform, make_views
from .checkpoint import (
    CheckpointError,
    CheckpointState,
    arrays_from_module,
    load_module_arrays,
)
from .config import RunConfig, config_to_dict
from .data import (
    AnnotatedFrame,
    BBox,
    Frame,
    PairSample,
    SequenceDataset,
    sample_pair,
    sample_pair_from_sequence,
)
from .detector import Detection, FusedDetector, build_detector, detect, detection_loss
from .evaluation import COCO_THRESHOLDS, EvalResult, evaluate
from .losses import RepBatch, loss_mcl
from .network import EncoderPair, RgbdEncoder, build_encoder, momentum_update


class _CsvLog:
    """Incremental CSV writer; a no-op when constructed with ``None``."""

    def __init__(self, path: str | Path | None, fieldnames: list[str]):
        self.fh = None
        if path is not None:
            path = Path(path)
            path.parent.mkdir(parents=True, exist_ok=True)
            self.fh = open(path, "w", newline="", encoding="utf-8")
            self.writer = csv.DictWriter(self.fh, fieldnames=fieldnames)
            self.writer.writeheader()

    def row(self, **kwargs) -> None:
        if self.fh is not None:
            self.writer.writerow(kwargs)

    def close(self) -> None:
        if self.fh is not None:
            self.fh.close()


def _lr_at(base_lr: float, schedule: str, step: int, total_steps: int) -> float:
    if schedule == "constant" or total_steps <= 1:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def _stack_views(items: list[tuple[np.ndarray, np.ndarray]]) -> tuple[torch.Tensor, torch.Tensor]:
    rgb = torch.from_numpy(np.stack([r.transpose(2, 0, 1) for r, _ in items]))
    depth = torch.from_numpy(np.stack([d[None, :, :] for _, d in items]))
    return rgb, depth


# ---------------------------------------------------------------------------
# Contrastive pretraining
# ---------------------------------------------------------------------------


@dataclass
class PretrainResult:
    state: CheckpointState
    pair: EncoderPair
    history: list[dict]


def pretrain(dataset: SequenceDataset, cfg: RunConfig, log_path: str | Path | None = None) -> PretrainResult:
    """Train the momentum encoder pair on temporal/augmented view pairs."""
    p = cfg.pretrain
    rng = np.random.default_rng(p.seed)
    pair = EncoderPair.create(cfg.blocks, seed=p.seed, momentum=p.ema_momentum, fuse_at=p.fuse_at)
    loss_cfg = cfg.loss
    if not p.crossmodal_enabled:
        loss_cfg = replace(loss_cfg, lambda_rgb_d=0.0, lambda_d_rgb=0.0)
    if p.optimizer == "adam":
        opt: torch.optim.Optimizer = torch.optim.Adam(
            pair.query.parameters(), lr=p.lr, weight_decay=p.weight_decay
        )
    else:
        opt = torch.optim.SGD(
            pair.query.parameters(), lr=p.lr, momentum=p.sgd_momentum, weight_decay=p.weight_decay
        )
    steps_per_epoch = p.steps_per_epoch or max(1, math.ceil(dataset.num_frames / p.batch_size))
    total_steps = p.epochs * steps_per_epoch

    frames_flat = dataset.all_frames()
    log = _CsvLog(log_path, ["step", "lr", "loss_mcl", "loss_rgbd", "loss_rgb_d", "loss_d_rgb"])
    history: list[dict] = []
    step = 0
    try:
        for _epoch in range(p.epochs):
            for _ in range(steps_per_epoch):
                lr_t = _lr_at(p.lr, p.lr_schedule, step, total_steps)
                for group in opt.param_groups:
                    group["lr"] = lr_t

                if p.batch_sampling == "distinct_seq":
                    seq_slots: list[int | None] = []
                    while len(seq_slots) < p.batch_size:
                        block = rng.permutation(dataset.num_sequences)
                        seq_slots.extend(int(i) for i in block[: p.batch_size - len(seq_slots)])
                else:
                    seq_slots = [None] * p.batch_size

                view1, view2 = [], []
                for slot in seq_slots:
                    if p.pairing_mode == "augment_only":
                        if slot is None:
                            f = frames_flat[int(rng.integers(0, len(frames_flat)))]
                        else:
                            seq = dataset.sequences[slot]
                            f = seq[int(rng.integers(0, len(seq)))]
                        sample = PairSample(view1=f, view2=f, offset=0)
                    elif slot is None:
                        sample = sample_pair(dataset, cfg.sampler, rng)
                    else:
                        sample = sample_pair_from_sequence(dataset, slot, cfg.sampler, rng)
                    aug = make_views(
                        sample, cfg.transform, rng, augment=p.pairing_mode != "temporal_only"
                    )
                    view1.append((aug.rgb1, aug.depth1))
                    view2.append((aug.rgb2, aug.depth2))
                rgb1, depth1 = _stack_views(view1)
                rgb2, depth2 = _stack_views(view2)

                q1 = pair.query(rgb1, depth1)
                q2 = pair.query(rgb2, depth2)
                with torch.no_grad():
                    k1 = pair.key(rgb1, depth1)
                    k2 = pair.key(rgb2, depth2)
                loss, parts = loss_mcl(RepBatch(q1=q1, q2=q2, k1=k1, k2=k2), loss_cfg)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                momentum_update(pair)

                row = {"step": step, "lr": lr_t, "loss_mcl": float(loss.detach()), **parts}
                history.append(row)
                if step % max(p.log_every, 1) == 0:
                    log.row(**{k: f"{v:.6f}" if isinstance(v, float) else v for k, v in row.items()})
                step += 1
    finally:
        log.close()

    meta = {
        "kind": "pretrain",
        "config": config_to_dict(cfg),
        "epoch": p.epochs,
        "step": step,
        "seed": p.seed,
        "loss_tail": [round(h["loss_mcl"], 8) for h in history[-50:]],
    }
    arrays = {
        **arrays_from_module(pair.query, "query/"),
        **arrays_from_module(pair.key, "key/"),
    }
    return PretrainResult(state=CheckpointState(meta=meta, arrays=arrays), pair=pair, history=history)


def encoder_from_state(state: CheckpointState, cfg: RunConfig) -> RgbdEncoder:
    """Rebuild the trained query encoder from a pretraining checkpoint."""
    if state.meta.get("kind") != "pretrain":
        raise CheckpointError(
            f"expected a pretraining checkpoint, got kind={state.meta.get('kind')!r}"
        )
    fuse_at = state.meta.get("config", {}).get("pretrain", {}).get("fuse_at", "C3")
    encoder = build_encoder(cfg.blocks, seed=0, fuse_at=fuse_at)
    load_module_arrays(encoder, state.arrays, "query/")
    return encoder


# ---------------------------------------------------------------------------
# Detector finetuning
# ---------------------------------------------------------------------------


def _prepare_detection_frames(
    frames: list[AnnotatedFrame], input_size: tuple[int, int]
) -> tuple[torch.Tensor, torch.Tensor, list[list[BBox]]]:
    """Normalize frames to network tensors; boxes scaled into tensor coords."""
    rgbs, depths, boxes = [], [], []
    ident = identity_transform(input_size)
    for af in frames:
        h, w = af.frame.rgb.shape[:2]
        rgb_n, depth_n = apply(ident, af.frame.rgb, af.frame.depth)
        sy, sx = input_size[0] / h, input_size[1] / w
        rgbs.append(rgb_n.transpose(2, 0, 1))
        depths.append(depth_n[None, :, :])
        boxes.append(
            [
                BBox(b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy, b.class_id)
                for b in af.boxes
            ]
        )
    return torch.from_numpy(np.stack(rgbs)), torch.from_numpy(np.stack(depths)), boxes


@dataclass
class FinetuneResult:
    state: CheckpointState
    model: FusedDetector
    history: list[dict]
    eval_history: list[tuple[int, float]]  # (step, train AP50) when eval_every > 0
    steps_to_target: int | None  # first step count reaching early_stop_ap50


def finetune(
    frames: list[AnnotatedFrame],
    encoder_state: CheckpointState | None,
    cfg: RunConfig,
    log_path: str | Path | None = None,
) -> FinetuneResult:
    """Train the detector, optionally from a pretrained backbone.

    ``init_mode="timclr"`` requires ``encoder_state`` (the pretraining
    checkpoint) and copies its query-encoder backbone into the detector;
    ``init_mode="random"`` ignores it.
    """
    f = cfg.finetune
    if not frames:
        raise ValueError("no training frames")
    if f.init_mode == "timclr":
        if encoder_state is None:
            raise ValueError('init_mode "timclr" requires a pretraining checkpoint')
        encoder = encoder_from_state(encoder_state, cfg)
    else:
        encoder = None
    model = build_detector(cfg.blocks, cfg.detector, seed=f.seed, encoder=encoder)
    opt = torch.optim.SGD(
        model.parameters(), lr=f.lr, momentum=f.sgd_momentum, weight_decay=f.weight_decay
    )
    rng = np.random.default_rng(f.seed)

    rgb_all, depth_all, boxes_all = _prepare_detection_frames(frames, cfg.blocks.input_size)
    n = len(frames)
    steps_per_epoch = f.steps_per_epoch or max(1, math.ceil(n / f.batch_size))
    total_steps = f.epochs * steps_per_epoch

    def batch_stream():
        while True:
            perm = rng.permutation(n)
            for start in range(0, n, f.batch_size):
                yield perm[start : start + f.batch_size]

    batches = batch_stream()
    log = _CsvLog(log_path, ["step", "lr", "loss", "loss_box", "loss_obj", "loss_cls", "ap50"])
    history: list[dict] = []
    eval_history: list[tuple[int, float]] = []
    steps_to_target: int | None = None
    step = 0
    stop = False
    try:
        for _epoch in range(f.epochs):
            if stop:
                break
            for _ in range(steps_per_epoch):
                lr_t = _lr_at(f.lr, f.lr_schedule, step, total_steps)
                for group in opt.param_groups:
                    group["lr"] = lr_t
                idx = next(batches)
                raws = model(rgb_all[idx], depth_all[idx])
                loss, parts = detection_loss(raws, [boxes_all[i] for i in idx], cfg.detector)
                opt.zero_grad(set_to_none=True)
                loss.backward()
                opt.step()
                step += 1

                ap50 = None
                if f.eval_every > 0 and step % f.eval_every == 0:
                    result = evaluate_detector(model, frames, cfg, thresholds=(0.5,))
                    ap50 = result.ap50
                    eval_history.append((step, ap50))
                    if f.early_stop_ap50 > 0 and ap50 >= f.early_stop_ap50:
                        if steps_to_target is None:
                            steps_to_target = step
                        stop = True
                row = {"step": step, "lr": lr_t, "loss": float(loss.detach()), **parts}
                history.append(row)
                if (step - 1) % max(f.log_every, 1) == 0:
                    log.row(
                        **{k: f"{v:.6f}" if isinstance(v, float) else v for k, v in row.items()},
                        ap50="" if ap50 is None else f"{ap50:.6f}",
                    )
                if stop:
                    break
    finally:
        log.close()

    meta = {
        "kind": "detector",
        "config": config_to_dict(cfg),
        "epoch": f.epochs,
        "step": step,
        "seed": f.seed,
        "init_mode": f.init_mode,
        "loss_tail": [round(h["loss"], 8) for h in history[-50:]],
        "steps_to_target": steps_to_target,
        "eval_history": [[s, round(a, 6)] for s, a in eval_history],
    }
    state = CheckpointState(meta=meta, arrays=arrays_from_module(model, "model/"))
    return FinetuneResult(
        state=state,
        model=model,
        history=history,
        eval_history=eval_history,
        steps_to_target=steps_to_target,
    )


def detector_from_state(state: CheckpointState, cfg: RunConfig) -> FusedDetector:
    """Rebuild a detector from a finetuning checkpoint."""
    if state.meta.get("kind") != "detector":
        raise CheckpointError(f"expected a detector checkpoint, got kind={state.meta.get('kind')!r}")
    model = build_detector(cfg.blocks, cfg.detector, seed=0)
    load_module_arrays(model, state.arrays, "model/")
    return model


# ---------------------------------------------------------------------------
# Dataset-level detection and evaluation
# ---------------------------------------------------------------------------

FrameKey = tuple[str, int]


def detect_frames(
    model: FusedDetector, frames: list[Frame], cfg: RunConfig
) -> dict[FrameKey, list[Detection]]:
    """Run detection over frames; boxes in original frame coordinates."""
    out: dict[FrameKey, list[Detection]] = {}
    with torch.no_grad():
        for frame in frames:
            out[(frame.seq_id, frame.frame_idx)] = detect(
                model, frame.rgb, frame.depth, cfg.detector, input_size=cfg.blocks.input_size
            )
    return out


def evaluate_detector(
    model: FusedDetector,
    frames: list[AnnotatedFrame],
    cfg: RunConfig,
    thresholds: tuple[float, ...] = COCO_THRESHOLDS,
    method: str = "101pt",
) -> EvalResult:
    detections = detect_frames(model, [af.frame for af in frames], cfg)
    ground_truth = {(af.frame.seq_id, af.frame.frame_idx): list(af.boxes) for af in frames}
    return evaluate(detections, ground_truth, thresholds=thresholds, method=method)


def save_detections(dets_by_frame: dict[FrameKey, list[Detection]], path: str | Path) -> None:
    """Write detections as JSON records sorted by frame key."""
    payload = [
        {
            "seq_id": seq_id,
            "frame_idx": frame_idx,
            "detections": [
                {
                    "x_min": d.box.x_min,
                    "y_min": d.box.y_min,
                    "x_max": d.box.x_max,
                    "y_max": d.box.y_max,
                    "score": d.score,
                    "class_id": d.class_id,
                }
                for d in dets
            ],
        }
        for (seq_id, frame_idx), dets in sorted(dets_by_frame.items())
    ]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_detections(path: str | Path) -> dict[FrameKey, list[Detection]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"detections file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    out: dict[FrameKey, list[Detection]] = {}
    for rec in payload:
        out[(rec["seq_id"], int(rec["frame_idx"]))] = [
            Detection(
                box=BBox(d["x_min"], d["y_min"], d["x_max"], d["y_max"], int(d["class_id"])),
                score=float(d["score"]),
                class_id=int(d["class_id"]),
            )
            for d in rec["detections"]
        ]
    return out


# ---------------------------------------------------------------------------
# Ablation runner
# ---------------------------------------------------------------------------


def _with_pretrain(cfg: RunConfig, **kw) -> RunConfig:
    return replace(cfg, pretrain=replace(cfg.pretrain, **kw))


ABLATION_AXES: list[tuple[str, list[str]]] = [
    ("pairing_mode", ["augment_only", "temporal_only", "combined"]),
    ("fuse_at", ["C3", "C4", "C5"]),
    ("crossmodal", ["on", "off"]),
]


def run_ablation(
    cfg: RunConfig,
    pretrain_dataset: SequenceDataset,
    train_frames: list[AnnotatedFrame],
    eval_frames: list[AnnotatedFrame],
    out_dir: str | Path,
) -> list[dict]:
    """Run the full ablation matrix with shared seeds; one CSV row per cell.

    Axes: pairing mode (3), fusion stage (3), crossmodal loss on/off (2).
    Every cell reuses the base config's pretrain/finetune seeds so rows are
    comparable; each cell pretrains, finetunes, evaluates on the held-out
    frames, and leaves its logs under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for axis, variants in ABLATION_AXES:
        for variant in variants:
            if axis == "pairing_mode":
                cell_cfg = _with_pretrain(cfg, pairing_mode=variant)
            elif axis == "fuse_at":
                cell_cfg = _with_pretrain(cfg, fuse_at=variant)
            else:
                cell_cfg = _with_pretrain(cfg, crossmodal_enabled=variant == "on")
            tag = f"{axis}-{variant}"
            pre = pretrain(pretrain_dataset, cell_cfg, log_path=out_dir / f"{tag}-pretrain.csv")
            fin = finetune(
                train_frames, pre.state, cell_cfg, log_path=out_dir / f"{tag}-finetune.csv"
            )
            result = evaluate_detector(fin.model, eval_frames, cell_cfg)
            rows.append(
                {
                    "axis": axis,
                    "variant": variant,
                    "pretrain_seed": cell_cfg.pretrain.seed,
                    "finetune_seed": cell_cfg.finetune.seed,
                    "ap50": round(result.ap50, 6),
                    "ap": round(result.ap, 6),
                }
            )
    with open(out_dir / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["axis", "variant", "pretrain_seed", "finetune_seed", "ap50", "ap"]
        )
        writer.writeheader()
        writer.writerows(rows)
    return rows
