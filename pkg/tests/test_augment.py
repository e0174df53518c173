"""Synchronized RGB-D augmentation: geometry oracles, determinism, photometry."""

from __future__ import annotations

import numpy as np
import pytest

from oracles import bilinear_scalar, nearest_scalar
from rgbdet.augment import (
    Transform,
    apply,
    identity_transform,
    make_views,
    resample_bilinear,
    resample_nearest,
    sample_transform,
)
from rgbdet.config import TransformSpec
from rgbdet.data import Frame, PairSample


def _rgbd(h=24, w=32, seed=0):
    rng = np.random.default_rng(seed)
    rgb = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    depth = rng.integers(500, 9000, (h, w), dtype=np.uint16)
    return rgb, depth


def test_identity_transform_is_pure_normalization():
    rgb, depth = _rgbd()
    t = identity_transform(rgb.shape[:2])
    rgb_out, depth_out = apply(t, rgb, depth)
    assert rgb_out.dtype == np.float32 and depth_out.dtype == np.float32
    assert np.array_equal(rgb_out, (rgb.astype(np.float64) / 255.0).astype(np.float32))
    assert np.array_equal(depth_out, (depth.astype(np.float64) / 10000.0).astype(np.float32))


def test_resample_matches_scalar_oracle():
    rng = np.random.default_rng(1)
    for _ in range(5):
        img = rng.random((13, 17, 3))
        gray = rng.random((11, 9))
        top = rng.uniform(0, 4)
        left = rng.uniform(0, 5)
        h = rng.uniform(4, 13 - top)
        w = rng.uniform(4, 17 - left)
        window = (top, left, h, w)
        out_size = (int(rng.integers(3, 10)), int(rng.integers(3, 10)))
        got = resample_bilinear(img, window, out_size)
        want = bilinear_scalar(img, window, out_size)
        assert np.allclose(got, want, atol=1e-12, rtol=0)
        window2 = (top * 11 / 13, left * 9 / 17, min(h, 11 - top * 11 / 13), min(w, 9 - left * 9 / 17))
        got_n = resample_nearest(gray, window2, out_size)
        want_n = nearest_scalar(gray, window2, out_size)
        assert np.array_equal(got_n, want_n)


def test_same_transform_is_deterministic():
    rgb, depth = _rgbd()
    t = Transform(
        crop=(0.1, 0.2, 0.6, 0.5),
        out_size=(16, 16),
        flip=True,
        jitter=(1.2, 0.8, 1.1, 0.05),
        grayscale=False,
        blur_sigma=0.7,
    )
    a1 = apply(t, rgb, depth)
    a2 = apply(t, rgb, depth)
    assert np.array_equal(a1[0], a2[0])
    assert np.array_equal(a1[1], a2[1])


def test_flip_reverses_columns():
    rgb, depth = _rgbd()
    base = identity_transform(rgb.shape[:2])
    flipped = Transform(
        crop=base.crop, out_size=base.out_size, flip=True, jitter=None, grayscale=False, blur_sigma=None
    )
    r0, d0 = apply(base, rgb, depth)
    r1, d1 = apply(flipped, rgb, depth)
    assert np.array_equal(r1, r0[:, ::-1])
    assert np.array_equal(d1, d0[:, ::-1])


def test_rgb_and_depth_stay_geometrically_aligned():
    # put one bright spike at the same pixel in both modalities and check that
    # crop+resize+flip move it to the same output location
    rng = np.random.default_rng(2)
    for trial in range(10):
        h, w = 40, 40
        rgb = np.zeros((h, w, 3), dtype=np.uint8)
        depth = np.full((h, w), 9500, dtype=np.uint16)
        y, x = int(rng.integers(8, 32)), int(rng.integers(8, 32))
        rgb[y, x] = 255
        depth[y, x] = 600
        t = Transform(
            crop=(0.1, 0.1, 0.75, 0.75),
            out_size=(32, 32),
            flip=bool(trial % 2),
            jitter=None,
            grayscale=False,
            blur_sigma=None,
        )
        rgb_out, depth_out = apply(t, rgb, depth)
        ry, rx = np.unravel_index(np.argmax(rgb_out.sum(axis=2)), rgb_out.shape[:2])
        dy, dx = np.unravel_index(np.argmin(depth_out), depth_out.shape)
        assert abs(int(ry) - int(dy)) <= 1 and abs(int(rx) - int(dx)) <= 1


def test_photometric_ops():
    rgb = np.full((8, 8, 3), 100, dtype=np.uint8)
    depth = np.full((8, 8), 2000, dtype=np.uint16)
    ident = identity_transform((8, 8))

    bright = Transform(
        crop=ident.crop, out_size=(8, 8), flip=False,
        jitter=(1.5, 1.0, 1.0, 0.0), grayscale=False, blur_sigma=None,
    )
    r, _ = apply(bright, rgb, depth)
    assert np.allclose(r, 100 / 255 * 1.5, atol=1e-6)

    gray = Transform(
        crop=ident.crop, out_size=(8, 8), flip=False,
        jitter=None, grayscale=True, blur_sigma=None,
    )
    colored = rgb.copy()
    colored[..., 0] = 200
    g, _ = apply(gray, colored, depth)
    assert np.allclose(g[..., 0], g[..., 1]) and np.allclose(g[..., 1], g[..., 2])

    # saturation 0 is grayscale too
    desat = Transform(
        crop=ident.crop, out_size=(8, 8), flip=False,
        jitter=(1.0, 1.0, 0.0, 0.0), grayscale=False, blur_sigma=None,
    )
    d, _ = apply(desat, colored, depth)
    assert np.allclose(d[..., 0], d[..., 1], atol=1e-6)


def test_depth_normalization_clamps():
    rgb = np.zeros((4, 4, 3), dtype=np.uint8)
    depth = np.full((4, 4), 20000, dtype=np.uint16)  # beyond the 10 m scale
    _, d = apply(identity_transform((4, 4)), rgb, depth)
    assert np.array_equal(d, np.ones((4, 4), dtype=np.float32))


def test_blur_applies_to_both_modalities():
    rgb = np.zeros((16, 16, 3), dtype=np.uint8)
    rgb[8, 8] = 255
    depth = np.full((16, 16), 9000, dtype=np.uint16)
    depth[8, 8] = 600
    t = Transform(
        crop=(0.0, 0.0, 1.0, 1.0), out_size=(16, 16), flip=False,
        jitter=None, grayscale=False, blur_sigma=1.0,
    )
    r, d = apply(t, rgb, depth)
    assert 0 < r[8, 9].max() < r[8, 8].max()  # energy spread, peak retained
    assert d[8, 9] < d[0, 0]  # neighbor pulled toward the near spike


def test_transform_validation():
    with pytest.raises(ValueError, match="positive extent"):
        Transform(crop=(0.0, 0.0, 0.0, 1.0), out_size=(8, 8), flip=False, jitter=None, grayscale=False, blur_sigma=None)
    with pytest.raises(ValueError, match="unit square"):
        Transform(crop=(0.5, 0.0, 0.6, 1.0), out_size=(8, 8), flip=False, jitter=None, grayscale=False, blur_sigma=None)
    with pytest.raises(ValueError, match="output size"):
        Transform(crop=(0.0, 0.0, 1.0, 1.0), out_size=(0, 8), flip=False, jitter=None, grayscale=False, blur_sigma=None)
    with pytest.raises(ValueError, match="sigma"):
        Transform(crop=(0.0, 0.0, 1.0, 1.0), out_size=(8, 8), flip=False, jitter=None, grayscale=False, blur_sigma=-1.0)


def test_apply_input_validation():
    rgb, depth = _rgbd()
    t = identity_transform((8, 8))
    with pytest.raises(ValueError, match="rgb must be"):
        apply(t, rgb[..., 0], depth)
    with pytest.raises(ValueError, match="depth must be"):
        apply(t, rgb, depth[:-2])


def test_sample_transform_respects_probabilities():
    rng = np.random.default_rng(3)
    off = TransformSpec(flip_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0)
    on = TransformSpec(flip_prob=1.0, jitter_prob=1.0, grayscale_prob=1.0, blur_prob=1.0)
    for _ in range(20):
        t = sample_transform(off, rng)
        assert not t.flip and t.jitter is None and not t.grayscale and t.blur_sigma is None
        t = sample_transform(on, rng)
        assert t.flip and t.jitter is not None and t.grayscale and t.blur_sigma is not None
        assert off.blur_sigma[0] <= t.blur_sigma <= off.blur_sigma[1]
        lo, hi = on.crop_scale
        area = t.crop[2] * t.crop[3]
        ratio = t.crop[3] / t.crop[2]
        assert lo - 1e-9 <= area <= hi + 1e-9 or t.crop == (0.0, 0.0, 1.0, 1.0)
        if t.crop != (0.0, 0.0, 1.0, 1.0):
            assert on.crop_ratio[0] - 1e-9 <= ratio <= on.crop_ratio[1] + 1e-9


def test_full_window_crop_when_scale_pinned():
    rng = np.random.default_rng(4)
    spec = TransformSpec(crop_scale=(1.0, 1.0), crop_ratio=(1.0, 1.0))
    t = sample_transform(spec, rng)
    assert t.crop == (0.0, 0.0, 1.0, 1.0)


def test_make_views_identity_vs_augment(tiny_dataset):
    dataset, _ = tiny_dataset
    seq = dataset.sequences[0]
    pair = PairSample(view1=seq[0], view2=seq[1], offset=seq[1].frame_idx - seq[0].frame_idx)
    spec = TransformSpec(out_size=(32, 32))
    rng = np.random.default_rng(5)

    plain = make_views(pair, spec, rng, augment=False)
    assert plain.t1 == identity_transform((32, 32)) == plain.t2
    expected1, _ = apply(identity_transform((32, 32)), seq[0].rgb, seq[0].depth)
    assert np.array_equal(plain.rgb1, expected1)

    auged = make_views(pair, spec, rng, augment=True)
    assert auged.rgb1.shape == (32, 32, 3) and auged.depth1.shape == (32, 32)
    assert auged.rgb1.dtype == np.float32


def test_float_inputs_accepted():
    rgb = np.random.default_rng(6).random((8, 8, 3))  # already in [0, 1]
    depth = np.full((8, 8), 1234.0)
    r, d = apply(identity_transform((8, 8)), rgb, depth)
    assert np.allclose(r, rgb.astype(np.float32))
    assert np.allclose(d, 0.1234)
