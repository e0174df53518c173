"""Fused RGB-D detector: backbone transfer, multiscale neck, decode, loss.

Architecture (strides 8 and 16)::

    rgb   -> C1 -> C2 -> C3 --\
                               concat -> 1x1 conv -> c3_fused --------------\
    depth -> C1 -> C2 -> C3 --/                        |                     |
                                                       C4 -> SPP -> t4 --\  |
    top-down:    p3 = conv( cat( upsample2x(conv1x1(t4)), c3_fused ) ) <-+--/
    bottom-up:   p4 = conv( cat( downsample2x(p3), t4 ) )
    heads:       conv3x3 -> (A * (5 + num_classes)) channels per scale

The backbone (both stems, the fusion conv, and C4) mirrors the contrastive
encoder's C3-fusion topology so pretrained weights transfer by direct copy;
:func:`transfer_encoder_weights` copies every module whose pretrained
counterpart exists with matching shapes and reports what it copied.

Raw head output at one scale is ``(B, A*(5+C), H, W)``, viewed as
``(B, A, 5+C, H, W)`` with channels ``[tx, ty, tw, th, obj, cls...]``.
Decode::

    cx = (col + sigmoid(tx)) * stride      w = anchor_w * exp(tw)
    cy = (row + sigmoid(ty)) * stride      h = anchor_h * exp(th)
    score = sigmoid(obj) * sigmoid(cls_c)

Detections require score strictly above ``conf_threshold``; boxes are
clipped to the image and degenerate results dropped.  NMS is greedy per
class with strictly-above-threshold suppression.

The training loss assigns each target to the (scale, anchor) of highest
width/height shape-IoU, in the cell containing the box center, and sums a
CIoU box term, a BCE objectness term (with unassigned high-IoU predictions
ignored), and a BCE class term.  Every branch of the loss is differentiable
end to end -- in particular the CIoU aspect weight is *not* detached -- so
finite-difference checks agree with autograd.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import boxops
from .augment import apply, identity_transform
from .config import BlockConfig, DetectorConfig
from .data import BBox
from .network import ConvNormAct, RgbdEncoder, init_weights, make_stage


@dataclass(frozen=True)
class Detection:
    box: BBox
    score: float
    class_id: int


class SpatialPyramidPooling(nn.Module):
    """Concatenate the input with stride-1 same-padded max-pools of it."""

    def __init__(self, pool_sizes: tuple[int, ...]):
        super().__init__()
        if any(k % 2 == 0 for k in pool_sizes):
            raise ValueError(f"pool sizes must be odd, got {pool_sizes}")
        self.pool_sizes = tuple(pool_sizes)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        pooled = [x] + [F.max_pool2d(x, k, stride=1, padding=k // 2) for k in self.pool_sizes]
        return torch.cat(pooled, dim=1)


class FusedDetector(nn.Module):
    """Two-stem fused backbone, SPP + two-scale aggregation neck, conv heads."""

    def __init__(self, blocks: BlockConfig, det: DetectorConfig):
        super().__init__()
        if tuple(det.strides) != (8, 16):
            raise ValueError(f"this detector reads stride-8/16 maps, got strides {det.strides}")
        self.blocks = blocks
        self.det = det
        w1, w2, w3, w4, _ = blocks.widths

        def stem(c_in: int) -> nn.Sequential:
            return nn.Sequential(
                make_stage(1, c_in, w1), make_stage(2, w1, w2), make_stage(3, w2, w3)
            )

        self.rgb_stem = stem(3)
        self.depth_stem = stem(1)
        self.fusion = nn.Conv2d(2 * w3, w3, 1)
        self.c4 = make_stage(4, w3, w4)

        self.spp = SpatialPyramidPooling(det.spp_pool_sizes)
        self.spp_reduce = ConvNormAct(w4 * (len(det.spp_pool_sizes) + 1), w4, kernel=1)
        self.lateral = ConvNormAct(w4, w3, kernel=1)
        self.p3_conv = ConvNormAct(2 * w3, w3)
        self.downsample = ConvNormAct(w3, w3, stride=2)
        self.p4_conv = ConvNormAct(w3 + w4, w4)

        per_anchor = 5 + det.num_classes
        self.head_p3 = nn.Conv2d(w3, len(det.anchors[0]) * per_anchor, 3, padding=1)
        self.head_p4 = nn.Conv2d(w4, len(det.anchors[1]) * per_anchor, 3, padding=1)

    def forward(self, rgb: torch.Tensor, depth: torch.Tensor) -> list[torch.Tensor]:
        if rgb.ndim != 4 or rgb.shape[1] != 3 or depth.ndim != 4 or depth.shape[1] != 1:
            raise ValueError(
                f"expected rgb (N, 3, H, W) and depth (N, 1, H, W), got "
                f"{tuple(rgb.shape)} and {tuple(depth.shape)}"
            )
        if rgb.shape[2] % 16 or rgb.shape[3] % 16:
            raise ValueError(f"spatial size must be divisible by 16, got {tuple(rgb.shape[2:])}")
        c3 = self.fusion(torch.cat([self.rgb_stem(rgb), self.depth_stem(depth)], dim=1))
        t4 = self.spp_reduce(self.spp(self.c4(c3)))
        up = F.interpolate(self.lateral(t4), scale_factor=2.0, mode="nearest")
        p3 = self.p3_conv(torch.cat([up, c3], dim=1))
        p4 = self.p4_conv(torch.cat([self.downsample(p3), t4], dim=1))
        return [self.head_p3(p3), self.head_p4(p4)]


def transfer_encoder_weights(model: FusedDetector, encoder: RgbdEncoder) -> list[str]:
    """Copy pretrained backbone modules into the detector (exact float copy).

    Copies each of ``rgb_stem[0..2]``, ``depth_stem[0..2]``, ``fusion``, and
    ``c4`` from the encoder's fused path when a counterpart with identical
    shapes exists (all of them for a C3-fusion encoder; only the stems when
    the encoder fused later, since its stage-4 and fusion then live on
    per-modality paths with different shapes/meaning).  Returns the copied
    module names; raises if nothing is copyable.
    """
    pairs: list[tuple[str, nn.Module, nn.Module]] = []
    for i in range(3):
        pairs.append((f"rgb_stem.{i}", model.rgb_stem[i], encoder.rgb_stem[i]))
        pairs.append((f"depth_stem.{i}", model.depth_stem[i], encoder.depth_stem[i]))
    if encoder.fuse_at == "C3":
        pairs.append(("fusion", model.fusion, encoder.fusion))
        pairs.append(("c4", model.c4, encoder.shared[0]))

    copied: list[str] = []
    for name, dst, src in pairs:
        src_state = src.state_dict()
        dst_state = dst.state_dict()
        if set(src_state) != set(dst_state) or any(
            src_state[k].shape != dst_state[k].shape for k in src_state
        ):
            raise ValueError(
                f"cannot transfer {name}: encoder/detector shapes differ "
                f"(were they built from the same width config?)"
            )
        dst.load_state_dict(src_state)
        copied.append(name)
    if not copied:
        raise ValueError("no transferable modules found")
    return copied


def build_detector(
    blocks: BlockConfig, det: DetectorConfig, seed: int, encoder: RgbdEncoder | None = None
) -> FusedDetector:
    """Fresh detector; optionally initialize the backbone from an encoder.

    The objectness logit bias starts at ``det.obj_bias_init`` so the initial
    objectness probability is small and early training is not swamped by
    negatives.
    """
    model = FusedDetector(blocks, det)
    init_weights(model, seed)
    with torch.no_grad():
        for head, anchors in ((model.head_p3, det.anchors[0]), (model.head_p4, det.anchors[1])):
            bias = head.bias.view(len(anchors), 5 + det.num_classes)
            bias[:, 4] = det.obj_bias_init
    if encoder is not None:
        transfer_encoder_weights(model, encoder)
    return model


# ---------------------------------------------------------------------------
# Decode / NMS
# ---------------------------------------------------------------------------


def _split_raw(raw: torch.Tensor, num_anchors: int, num_classes: int) -> torch.Tensor:
    """(B, A*(5+C), H, W) -> (B, A, 5+C, H, W) with shape validation."""
    b, ch, h, w = raw.shape
    expected = num_anchors * (5 + num_classes)
    if ch != expected:
        raise ValueError(f"raw prediction has {ch} channels, expected {expected}")
    return raw.view(b, num_anchors, 5 + num_classes, h, w)


def _decode_boxes(raw5: torch.Tensor, anchors: tuple[tuple[int, int], ...], stride: int) -> torch.Tensor:
    """Differentiable box decode: (B, A, 5+C, H, W) -> (B, A, H, W, 4) corners."""
    _, _, _, h, w = raw5.shape
    dtype, device = raw5.dtype, raw5.device
    cols = torch.arange(w, dtype=dtype, device=device).view(1, 1, 1, w)
    rows = torch.arange(h, dtype=dtype, device=device).view(1, 1, h, 1)
    aw = torch.tensor([a[0] for a in anchors], dtype=dtype, device=device).view(1, -1, 1, 1)
    ah = torch.tensor([a[1] for a in anchors], dtype=dtype, device=device).view(1, -1, 1, 1)
    cx = (cols + torch.sigmoid(raw5[:, :, 0])) * stride
    cy = (rows + torch.sigmoid(raw5[:, :, 1])) * stride
    bw = aw * torch.exp(raw5[:, :, 2])
    bh = ah * torch.exp(raw5[:, :, 3])
    return torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=-1)


def decode(raws: list[torch.Tensor], cfg: DetectorConfig) -> list[list[Detection]]:
    """Raw multi-scale predictions -> per-image detection lists (pre-NMS).

    Detections keep ``score > cfg.conf_threshold`` (strict); boxes are
    clipped to the image and dropped if clipping empties them.  Output order
    is deterministic: scale, then anchor, class, row, column.
    """
    if len(raws) != len(cfg.strides):
        raise ValueError(f"expected {len(cfg.strides)} scales, got {len(raws)}")
    batch = raws[0].shape[0]
    out: list[list[Detection]] = [[] for _ in range(batch)]
    for raw, anchors, stride in zip(raws, cfg.anchors, cfg.strides):
        raw5 = _split_raw(raw, len(anchors), cfg.num_classes)
        img_h = raw5.shape[3] * stride
        img_w = raw5.shape[4] * stride
        with torch.no_grad():
            boxes = _decode_boxes(raw5, anchors, stride)
            obj = torch.sigmoid(raw5[:, :, 4])
            cls = torch.sigmoid(raw5[:, :, 5:])
            scores = obj.unsqueeze(2) * cls  # (B, A, C, H, W)
            hits = (scores > cfg.conf_threshold).nonzero(as_tuple=False)
        boxes_np = boxes.cpu().numpy()
        scores_np = scores.cpu().numpy()
        for b, a, c, i, j in hits.cpu().numpy():
            x0, y0, x1, y1 = boxes_np[b, a, i, j]
            x0, x1 = max(x0, 0.0), min(x1, float(img_w))
            y0, y1 = max(y0, 0.0), min(y1, float(img_h))
            if x1 <= x0 or y1 <= y0:
                continue
            out[b].append(
                Detection(
                    box=BBox(float(x0), float(y0), float(x1), float(y1), class_id=int(c)),
                    score=float(scores_np[b, a, c, i, j]),
                    class_id=int(c),
                )
            )
    return out


def box_to_logits(
    box: BBox, anchor: tuple[float, float], stride: int
) -> tuple[int, int, float, float, float, float]:
    """Inverse of the box decode: ``(row, col, tx, ty, tw, th)`` for a box.

    Writing these values at ``(row, col)`` for that anchor/stride decodes
    back to the box exactly (up to float round-off).  Raises if the box
    center sits exactly on a cell boundary (the sigmoid inverse would need
    an infinite logit).
    """

    def logit(p: float) -> float:
        if not 0.0 < p < 1.0:
            raise ValueError(f"center offset {p} not strictly inside the cell")
        return math.log(p / (1.0 - p))

    cx, cy = box.center
    col, row = int(math.floor(cx / stride)), int(math.floor(cy / stride))
    tx = logit(cx / stride - col)
    ty = logit(cy / stride - row)
    tw = math.log(box.width / anchor[0])
    th = math.log(box.height / anchor[1])
    return row, col, tx, ty, tw, th


def nms(detections: list[Detection], iou_threshold: float) -> list[Detection]:
    """Greedy per-class NMS; result sorted by descending score (stable)."""
    if not detections:
        return []
    kept: list[tuple[float, int, Detection]] = []
    by_class: dict[int, list[tuple[int, Detection]]] = {}
    for idx, det in enumerate(detections):
        by_class.setdefault(det.class_id, []).append((idx, det))
    for _, members in sorted(by_class.items()):
        boxes = np.array([d.box.as_array() for _, d in members])
        scores = np.array([d.score for _, d in members])
        for k in boxops.nms_indices(boxes, scores, iou_threshold):
            idx, det = members[int(k)]
            kept.append((-det.score, idx, det))
    kept.sort(key=lambda t: (t[0], t[1]))
    return [det for _, _, det in kept]


def detect(
    model: FusedDetector,
    rgb: np.ndarray,
    depth: np.ndarray,
    cfg: DetectorConfig,
    input_size: tuple[int, int] | None = None,
) -> list[Detection]:
    """Run the full single-frame path: normalize, forward, decode, NMS.

    ``rgb`` is (H, W, 3) uint8; ``depth`` is (H, W) uint16 millimeters.  If
    ``input_size`` differs from the frame size, the frame is resized for the
    network and the boxes are mapped back to original pixel coordinates.
    """
    height, width = rgb.shape[:2]
    size = input_size if input_size is not None else (height, width)
    rgb_n, depth_n = apply(identity_transform(size), rgb, depth)
    rgb_t = torch.from_numpy(rgb_n.transpose(2, 0, 1)).unsqueeze(0)
    depth_t = torch.from_numpy(depth_n).unsqueeze(0).unsqueeze(0)
    with torch.no_grad():
        raws = model(rgb_t, depth_t)
    dets = nms(decode(raws, cfg)[0], cfg.nms_iou)
    sx, sy = width / size[1], height / size[0]
    if sx == 1.0 and sy == 1.0:
        return dets
    return [
        Detection(
            box=BBox(d.box.x_min * sx, d.box.y_min * sy, d.box.x_max * sx, d.box.y_max * sy, d.class_id),
            score=d.score,
            class_id=d.class_id,
        )
        for d in dets
    ]


# ---------------------------------------------------------------------------
# Training loss
# ---------------------------------------------------------------------------


def _shape_iou(w: float, h: float, anchor: tuple[float, float]) -> float:
    """IoU of two boxes sharing a center: pure width/height comparison."""
    inter = min(w, anchor[0]) * min(h, anchor[1])
    union = w * h + anchor[0] * anchor[1] - inter
    return inter / union if union > 0 else 0.0


def _assign_targets(
    targets: list[BBox], cfg: DetectorConfig, grid_sizes: list[tuple[int, int]]
) -> list[list[tuple[int, int, int, BBox]]]:
    """Per scale: (anchor, row, col, target) assignments.

    Targets are first put in a canonical order (by center, size, class) so
    the result -- including who wins a cell collision (the later target in
    canonical order) -- does not depend on input order.
    """
    ordered = sorted(targets, key=lambda b: (b.center[0], b.center[1], b.width, b.height, b.class_id))
    slots: list[dict[tuple[int, int, int], BBox]] = [{} for _ in cfg.strides]
    for t in ordered:
        best = (-1.0, 0, 0)
        for s, anchors in enumerate(cfg.anchors):
            for a, anchor in enumerate(anchors):
                v = _shape_iou(t.width, t.height, anchor)
                if v > best[0]:
                    best = (v, s, a)
        _, s, a = best
        stride = cfg.strides[s]
        gh, gw = grid_sizes[s]
        cx, cy = t.center
        col = min(max(int(cx // stride), 0), gw - 1)
        row = min(max(int(cy // stride), 0), gh - 1)
        slots[s][(a, row, col)] = t
    return [[(a, r, c, t) for (a, r, c), t in sorted(sl.items())] for sl in slots]


def _ciou(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Complete IoU between (N, 4) corner-form boxes; fully differentiable."""
    eps = 1e-9
    px0, py0, px1, py1 = pred.unbind(dim=1)
    tx0, ty0, tx1, ty1 = target.unbind(dim=1)
    iw = (torch.minimum(px1, tx1) - torch.maximum(px0, tx0)).clamp(min=0)
    ih = (torch.minimum(py1, ty1) - torch.maximum(py0, ty0)).clamp(min=0)
    inter = iw * ih
    union = (px1 - px0) * (py1 - py0) + (tx1 - tx0) * (ty1 - ty0) - inter
    iou = inter / (union + eps)

    cdist = ((px0 + px1) - (tx0 + tx1)) ** 2 / 4 + ((py0 + py1) - (ty0 + ty1)) ** 2 / 4
    ex0 = torch.minimum(px0, tx0)
    ey0 = torch.minimum(py0, ty0)
    ex1 = torch.maximum(px1, tx1)
    ey1 = torch.maximum(py1, ty1)
    diag = (ex1 - ex0) ** 2 + (ey1 - ey0) ** 2

    v = (4 / math.pi**2) * (
        torch.atan((tx1 - tx0) / (ty1 - ty0 + eps)) - torch.atan((px1 - px0) / (py1 - py0 + eps))
    ) ** 2
    alpha = v / (1 - iou + v + eps)
    return iou - cdist / (diag + eps) - alpha * v


def detection_loss(
    raws: list[torch.Tensor], targets: list[list[BBox]], cfg: DetectorConfig
) -> tuple[torch.Tensor, dict[str, float]]:
    """CIoU box + BCE objectness + BCE class loss over a batch.

    ``targets[b]`` lists the ground-truth boxes of image ``b`` in input-
    tensor pixel coordinates.  Objectness negatives skip unassigned
    predictions whose decoded box overlaps any target above
    ``cfg.ignore_iou``.  An image with no targets contributes only the
    objectness term.  Invariant to target list order.
    """
    if len(raws) != len(cfg.strides):
        raise ValueError(f"expected {len(cfg.strides)} scales, got {len(raws)}")
    batch = raws[0].shape[0]
    if len(targets) != batch:
        raise ValueError(f"targets for {len(targets)} images but batch is {batch}")
    dtype = raws[0].dtype

    raw5s = [
        _split_raw(raw, len(anchors), cfg.num_classes)
        for raw, anchors in zip(raws, cfg.anchors)
    ]
    grid_sizes = [(r.shape[3], r.shape[4]) for r in raw5s]

    box_terms: list[torch.Tensor] = []
    cls_terms: list[torch.Tensor] = []
    obj_num = torch.zeros((), dtype=dtype)
    obj_den = 0

    per_image_assign = [_assign_targets(t, cfg, grid_sizes) for t in targets]

    for s, (raw5, anchors, stride) in enumerate(zip(raw5s, cfg.anchors, cfg.strides)):
        obj_target = torch.zeros_like(raw5[:, :, 4])
        keep = torch.ones_like(obj_target, dtype=torch.bool)

        with torch.no_grad():
            decoded_all = _decode_boxes(raw5, anchors, stride)
        for b in range(batch):
            if targets[b]:
                gt = np.array([t.as_array() for t in targets[b]])
                flat = decoded_all[b].reshape(-1, 4).numpy().astype(np.float64)
                best = boxops.iou_matrix(flat, gt).max(axis=1).reshape(obj_target.shape[1:])
                keep[b] = torch.from_numpy(best <= cfg.ignore_iou)

        bs, as_, rs, cs, tboxes = [], [], [], [], []
        for b in range(batch):
            for a, r, c, t in per_image_assign[b][s]:
                bs.append(b)
                as_.append(a)
                rs.append(r)
                cs.append(c)
                tboxes.append(t)
                obj_target[b, a, r, c] = 1.0
                keep[b, a, r, c] = True

        obj_bce = F.binary_cross_entropy_with_logits(raw5[:, :, 4], obj_target, reduction="none")
        obj_num = obj_num + obj_bce[keep].sum()
        obj_den += int(keep.sum())

        if tboxes:
            idx_b = torch.tensor(bs)
            idx_a = torch.tensor(as_)
            idx_r = torch.tensor(rs)
            idx_c = torch.tensor(cs)
            sel = raw5[idx_b, idx_a, :, idx_r, idx_c]  # (K, 5+C)
            cols = idx_c.to(dtype)
            rows = idx_r.to(dtype)
            aw = torch.tensor([anchors[a][0] for a in as_], dtype=dtype)
            ah = torch.tensor([anchors[a][1] for a in as_], dtype=dtype)
            cx = (cols + torch.sigmoid(sel[:, 0])) * stride
            cy = (rows + torch.sigmoid(sel[:, 1])) * stride
            bw = aw * torch.exp(sel[:, 2])
            bh = ah * torch.exp(sel[:, 3])
            pred_boxes = torch.stack([cx - bw / 2, cy - bh / 2, cx + bw / 2, cy + bh / 2], dim=1)
            tgt_boxes = torch.tensor(np.array([t.as_array() for t in tboxes]), dtype=dtype)
            box_terms.append(1.0 - _ciou(pred_boxes, tgt_boxes))

            cls_target = torch.zeros((len(tboxes), cfg.num_classes), dtype=dtype)
            for k, t in enumerate(tboxes):
                if t.class_id >= cfg.num_classes:
                    raise ValueError(
                        f"target class {t.class_id} out of range for {cfg.num_classes} classes"
                    )
                cls_target[k, t.class_id] = 1.0
            cls_terms.append(
                F.binary_cross_entropy_with_logits(sel[:, 5:], cls_target, reduction="none").reshape(-1)
            )

    zero = torch.zeros((), dtype=dtype)
    box_loss = torch.cat(box_terms).mean() if box_terms else zero
    cls_loss = torch.cat(cls_terms).mean() if cls_terms else zero
    obj_loss = obj_num / obj_den if obj_den else zero
    total = (
        cfg.loss_box_weight * box_loss
        + cfg.loss_obj_weight * obj_loss
        + cfg.loss_cls_weight * cls_loss
    )
    parts = {
        "loss_box": float(box_loss.detach()),
        "loss_obj": float(obj_loss.detach()),
        "loss_cls": float(cls_loss.detach()),
    }
    return total, parts
