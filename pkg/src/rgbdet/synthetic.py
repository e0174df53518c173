"""Deterministic synthetic RGB-D sequences with ground-truth person boxes.

Each sequence shows ``num_actors`` articulated two-part "actors" (an ellipse
body plus a swinging head disk) moving smoothly inside disjoint horizontal
lanes, so actors never overlap one another and -- absent occluders -- every
frame contains exactly ``num_actors`` visible boxes.  Optional rectangular
occluders sweep across the scene at nearer depth and overwrite both RGB and
depth wherever they pass; ground-truth boxes cover only the still-visible
actor pixels and disappear when an actor is fully hidden.

Depth is rendered in millimeters: a far background at a constant per-sequence
depth, one constant nearer value per actor, and an even nearer value per
occluder.  The RGB background gets a per-sequence base color and linear
shading ramp (random orientation and amplitude), so sequences are
distinguishable in both modalities.  A sinusoidal lighting ramp multiplies
the RGB channels last; amplitude 0 disables it.

All randomness comes from a single ``numpy`` generator seeded from the
config, so identical configs produce byte-identical frames and boxes.
"""

from __future__ import annotations

import numpy as np

from .config import SynthConfig
from .data import Annotations, BBox, Frame, SequenceDataset


def _lane_actor_params(
    rng: np.random.Generator, lane_top: float, lane_h: float, width: int, frames: int
) -> dict:
    """Draw one actor's geometry, color, depth, and motion parameters."""
    bh = lane_h * rng.uniform(0.16, 0.20)  # body half-height
    bw = bh * rng.uniform(0.50, 0.70)  # body half-width
    hr = bh * rng.uniform(0.35, 0.45)  # head radius
    reach = bh + 0.8 * hr  # body center -> head center distance
    swing = rng.uniform(0.3, 0.6)  # max head swing angle, radians

    # Extents that must stay inside the lane / image for every pose.
    up = reach + hr
    down = bh
    half_w = max(bw, reach * np.sin(swing) + hr)
    pad = 1.0

    y_amp = 0.05 * lane_h
    cy_lo = lane_top + up + pad + y_amp
    cy_hi = lane_top + lane_h - down - pad - y_amp
    cy0 = rng.uniform(cy_lo, max(cy_lo, cy_hi))

    x_margin = half_w + pad
    color = rng.uniform(0.20, 0.95, size=3)

    return {
        "bh": bh,
        "bw": bw,
        "hr": hr,
        "reach": reach,
        "swing": swing,
        "cy0": cy0,
        "y_amp": y_amp,
        "x_margin": x_margin,
        "color": color,
        "head_color": np.clip(color * 1.25 + 0.05, 0.0, 1.0),
        "cycles_x": rng.uniform(0.5, 1.5),
        "phase_x": rng.uniform(0.0, 2.0 * np.pi),
        "cycles_y": rng.uniform(1.0, 2.0),
        "phase_y": rng.uniform(0.0, 2.0 * np.pi),
        "cycles_s": rng.uniform(2.0, 4.0),
        "phase_s": rng.uniform(0.0, 2.0 * np.pi),
    }


def _actor_pose(p: dict, t: int, frames: int, width: int) -> tuple[float, float, float, float]:
    """Body center (cx, cy) and head center (hx, hy) at frame ``t``."""
    u = t / max(frames, 1)
    span = width - 2.0 * p["x_margin"]
    cx = p["x_margin"] + span * (0.5 + 0.5 * np.sin(2.0 * np.pi * p["cycles_x"] * u + p["phase_x"]))
    cy = p["cy0"] + p["y_amp"] * np.sin(2.0 * np.pi * p["cycles_y"] * u + p["phase_y"])
    theta = p["swing"] * np.sin(2.0 * np.pi * p["cycles_s"] * u + p["phase_s"])
    hx = cx + p["reach"] * np.sin(theta)
    hy = cy - p["reach"] * np.cos(theta)
    return cx, cy, hx, hy


def generate_synthetic(cfg: SynthConfig, split: str = "train") -> tuple[SequenceDataset, Annotations]:
    """Render every sequence described by ``cfg``; returns frames plus boxes."""
    rng = np.random.default_rng(cfg.seed)
    height, width = cfg.image_size
    frames_n = cfg.frames_per_sequence
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)

    sequences: list[tuple[Frame, ...]] = []
    annotations: Annotations = {}

    for s in range(cfg.num_sequences):
        seq_id = f"seq_{s:04d}"

        base = rng.uniform(0.25, 0.60, size=3)
        shade_dir = rng.uniform(0.0, 2.0 * np.pi)
        shade_amp = rng.uniform(0.03, 0.12)
        ramp = (xs / width - 0.5) * np.cos(shade_dir) + (ys / height - 0.5) * np.sin(shade_dir)
        background = np.clip(base[None, None, :] + (shade_amp * ramp)[:, :, None], 0.0, 1.0)

        bg_depth = float(rng.uniform(*cfg.background_depth_mm))

        lane_h = height / max(cfg.num_actors, 1)
        actors = []
        for a in range(cfg.num_actors):
            p = _lane_actor_params(rng, a * lane_h, lane_h, width, frames_n)
            p["depth"] = float(rng.uniform(*cfg.actor_depth_mm))
            actors.append(p)

        frac, whole = np.modf(cfg.occluder_density)
        n_occ = int(whole) + int(rng.random() < frac)
        occluders = []
        for _ in range(n_occ):
            occluders.append(
                {
                    "w": rng.uniform(0.12, 0.25) * width,
                    "h": rng.uniform(0.30, 0.60) * height,
                    "cy": rng.uniform(0.30, 0.70) * height,
                    "color": np.clip(rng.uniform(0.05, 0.20) + rng.uniform(-0.03, 0.03, 3), 0.0, 1.0),
                    "depth": float(rng.uniform(*cfg.occluder_depth_mm)),
                    "cycles": rng.uniform(0.5, 1.5),
                    "phase": rng.uniform(0.0, 2.0 * np.pi),
                }
            )

        paint_order = sorted(range(len(actors)), key=lambda i: -actors[i]["depth"])

        frames: list[Frame] = []
        for t in range(frames_n):
            rgb = background.copy()
            depth = np.full((height, width), bg_depth)
            owner = np.full((height, width), -1, dtype=np.int32)

            for a in paint_order:
                p = actors[a]
                cx, cy, hx, hy = _actor_pose(p, t, frames_n, width)
                body = ((xs - cx) / p["bw"]) ** 2 + ((ys - cy) / p["bh"]) ** 2 <= 1.0
                head = (xs - hx) ** 2 + (ys - hy) ** 2 <= p["hr"] ** 2
                rgb[body] = p["color"]
                rgb[head] = p["head_color"]
                mask = body | head
                depth[mask] = p["depth"]
                owner[mask] = a

            for occ in occluders:
                u = t / max(frames_n, 1)
                ocx = width * (0.5 + 0.48 * np.sin(2.0 * np.pi * occ["cycles"] * u + occ["phase"]))
                x0, x1 = ocx - occ["w"] / 2.0, ocx + occ["w"] / 2.0
                y0, y1 = occ["cy"] - occ["h"] / 2.0, occ["cy"] + occ["h"] / 2.0
                mask = (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)
                rgb[mask] = occ["color"]
                depth[mask] = occ["depth"]
                owner[mask] = -2

            boxes = []
            for a in range(len(actors)):
                rows, cols = np.nonzero(owner == a)
                if rows.size:
                    boxes.append(
                        BBox(
                            x_min=float(cols.min()),
                            y_min=float(rows.min()),
                            x_max=float(cols.max() + 1),
                            y_max=float(rows.max() + 1),
                            class_id=0,
                        )
                    )

            ramp = 1.0 + cfg.lighting_amplitude * np.sin(2.0 * np.pi * t / max(frames_n, 1))
            rgb_u8 = np.round(np.clip(rgb * ramp, 0.0, 1.0) * 255.0).astype(np.uint8)
            depth_u16 = np.round(depth).astype(np.uint16)

            frames.append(Frame(rgb=rgb_u8, depth=depth_u16, seq_id=seq_id, frame_idx=t))
            annotations[(seq_id, t)] = tuple(boxes)

        sequences.append(tuple(frames))

    return SequenceDataset(split=split, sequences=tuple(sequences)), annotations
