"""Shared fixtures: single-threaded torch and small reusable configs/datasets."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
import torch

from rgbdet.config import (
    BlockConfig,
    RunConfig,
    SynthConfig,
    TransformSpec,
    validate_config,
)
from rgbdet.synthetic import generate_synthetic

torch.set_num_threads(1)


def tiny_cfg() -> RunConfig:
    """A 32x32 config with narrow widths, for fast mechanical smoke tests."""
    cfg = RunConfig(
        blocks=BlockConfig(widths=(4, 8, 12, 16, 16), rep_dim=8, input_size=(32, 32)),
        transform=TransformSpec(out_size=(32, 32)),
        synth=SynthConfig(
            num_sequences=2,
            frames_per_sequence=4,
            image_size=(32, 32),
            num_actors=1,
            occluder_density=0.0,
            lighting_amplitude=0.1,
            seed=7,
        ),
    )
    validate_config(cfg)
    return cfg


@pytest.fixture(scope="session")
def tiny_config() -> RunConfig:
    return tiny_cfg()


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    """2 sequences x 4 frames of 32x32 synthetic RGB-D, with annotations."""
    dataset, annotations = generate_synthetic(tiny_config.synth, split="train")
    return dataset, annotations


def random_boxes(rng: np.random.Generator, n: int, size: int = 64) -> np.ndarray:
    """(n, 4) random well-formed boxes inside a size x size image."""
    if n == 0:
        return np.zeros((0, 4), dtype=np.float64)
    cx = rng.uniform(4, size - 4, n)
    cy = rng.uniform(4, size - 4, n)
    w = rng.uniform(2, size / 2, n)
    h = rng.uniform(2, size / 2, n)
    x0 = np.clip(cx - w / 2, 0, size - 1)
    y0 = np.clip(cy - h / 2, 0, size - 1)
    x1 = np.clip(cx + w / 2, x0 + 0.5, size)
    y1 = np.clip(cy + h / 2, y0 + 0.5, size)
    return np.stack([x0, y0, x1, y1], axis=1)


def clustered_boxes(rng: np.random.Generator, n: int, size: int = 64) -> np.ndarray:
    """Random boxes drawn around a few shared centers so overlaps are common."""
    if n == 0:
        return np.zeros((0, 4), dtype=np.float64)
    centers = rng.uniform(10, size - 10, (max(1, n // 4), 2))
    out = np.zeros((n, 4), dtype=np.float64)
    for i in range(n):
        cx, cy = centers[int(rng.integers(0, len(centers)))]
        cx += rng.normal(0, 2)
        cy += rng.normal(0, 2)
        w = rng.uniform(4, 20)
        h = rng.uniform(4, 20)
        out[i] = (
            max(cx - w / 2, 0.0),
            max(cy - h / 2, 0.0),
            min(cx + w / 2, float(size)),
            min(cy + h / 2, float(size)),
        )
        if out[i, 2] <= out[i, 0]:
            out[i, 2] = out[i, 0] + 1.0
        if out[i, 3] <= out[i, 1]:
            out[i, 3] = out[i, 1] + 1.0
    return out


def make_run_config(**section_overrides) -> RunConfig:
    """RunConfig with whole sections replaced (keyword = section name)."""
    cfg = replace(RunConfig(), **section_overrides)
    validate_config(cfg)
    return cfg
