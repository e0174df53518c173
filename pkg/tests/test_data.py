"""Frame containers, dataset tree I/O, and temporal pair sampling."""

from __future__ import annotations

import numpy as np
import pytest

from rgbdet.config import SamplerConfig
from rgbdet.data import (
    AnnotatedFrame,
    BBox,
    DatasetError,
    Frame,
    PairSample,
    SequenceDataset,
    load_annotated_frames,
    load_annotations,
    load_sequences,
    sample_pair,
    sample_pair_from_sequence,
    sample_partner_index,
    save_annotations,
    save_sequences,
)


def _frame(seq_id="seq_0000", idx=0, h=8, w=8, fill=0):
    rgb = np.full((h, w, 3), fill, dtype=np.uint8)
    depth = np.full((h, w), 1000 + fill, dtype=np.uint16)
    return Frame(rgb=rgb, depth=depth, seq_id=seq_id, frame_idx=idx)


# Containers -------------------------------------------------------------------


def test_frame_validation():
    with pytest.raises(DatasetError, match="rgb must be"):
        Frame(rgb=np.zeros((8, 8), dtype=np.uint8), depth=np.zeros((8, 8), np.uint16), seq_id="s", frame_idx=0)
    with pytest.raises(DatasetError, match="rgb must be"):
        Frame(rgb=np.zeros((8, 8, 3), dtype=np.float32), depth=np.zeros((8, 8), np.uint16), seq_id="s", frame_idx=0)
    with pytest.raises(DatasetError, match="depth must be"):
        Frame(rgb=np.zeros((8, 8, 3), dtype=np.uint8), depth=np.zeros((8, 8), np.uint8), seq_id="s", frame_idx=0)
    with pytest.raises(DatasetError, match="dimensions differ"):
        Frame(rgb=np.zeros((8, 8, 3), dtype=np.uint8), depth=np.zeros((4, 8), np.uint16), seq_id="s", frame_idx=0)


def test_bbox_properties_and_validation():
    b = BBox(2.0, 3.0, 10.0, 7.0, class_id=1)
    assert b.width == 8.0 and b.height == 4.0
    assert b.center == (6.0, 5.0)
    assert b.area() == 32.0
    assert b.as_array().tolist() == [2.0, 3.0, 10.0, 7.0]
    with pytest.raises(DatasetError, match="degenerate"):
        BBox(5.0, 3.0, 5.0, 7.0)
    with pytest.raises(DatasetError, match="degenerate"):
        BBox(5.0, 8.0, 9.0, 7.0)
    with pytest.raises(DatasetError, match="negative class_id"):
        BBox(0.0, 0.0, 1.0, 1.0, class_id=-1)


def test_sequence_dataset_validation():
    with pytest.raises(DatasetError, match="empty sequence"):
        SequenceDataset(split="t", sequences=((),))
    with pytest.raises(DatasetError, match="mixed seq_ids"):
        SequenceDataset(split="t", sequences=((_frame("a", 0), _frame("b", 1)),))
    with pytest.raises(DatasetError, match="strictly increasing"):
        SequenceDataset(split="t", sequences=((_frame("a", 1), _frame("a", 0)),))
    ds = SequenceDataset(split="t", sequences=((_frame("a", 0), _frame("a", 1)), (_frame("b", 0),)))
    assert ds.num_sequences == 2
    assert ds.num_frames == 3
    assert [f.seq_id for f in ds.all_frames()] == ["a", "a", "b"]


def test_pair_sample_validation():
    with pytest.raises(DatasetError, match="crosses sequence boundary"):
        PairSample(view1=_frame("a", 0), view2=_frame("b", 1), offset=1)
    with pytest.raises(DatasetError, match="offset inconsistent"):
        PairSample(view1=_frame("a", 0), view2=_frame("a", 2), offset=1)


# Disk I/O ----------------------------------------------------------------------


def test_sequences_round_trip(tmp_path, tiny_dataset):
    dataset, annotations = tiny_dataset
    save_sequences(dataset, tmp_path)
    save_annotations(annotations, tmp_path, dataset.split)
    loaded = load_sequences(tmp_path, dataset.split)
    assert loaded.num_sequences == dataset.num_sequences
    for seq_a, seq_b in zip(loaded.sequences, dataset.sequences):
        for fa, fb in zip(seq_a, seq_b):
            assert fa.seq_id == fb.seq_id and fa.frame_idx == fb.frame_idx
            assert np.array_equal(fa.rgb, fb.rgb)
            assert np.array_equal(fa.depth, fb.depth)
    ann = load_annotations(tmp_path, dataset.split)
    assert ann == annotations
    joined = load_annotated_frames(tmp_path, dataset.split)
    assert len(joined) == dataset.num_frames
    assert all(isinstance(af, AnnotatedFrame) for af in joined)
    assert joined[0].boxes == annotations[(joined[0].frame.seq_id, joined[0].frame.frame_idx)]


def test_load_errors(tmp_path, tiny_dataset):
    with pytest.raises(DatasetError, match="no sequences found"):
        load_sequences(tmp_path, "nope")
    dataset, _ = tiny_dataset
    save_sequences(dataset, tmp_path)
    # break the rgb/depth index pairing of one sequence
    victim = sorted((tmp_path / "train").iterdir())[0] / "depth"
    next(victim.glob("*.png")).unlink()
    with pytest.raises(DatasetError, match="indices differ"):
        load_sequences(tmp_path, "train")
    with pytest.raises(DatasetError, match="annotation file not found"):
        load_annotations(tmp_path, "train")
    (tmp_path / "train" / "annotations.json").write_text("{not json")
    with pytest.raises(DatasetError, match="not valid JSON"):
        load_annotations(tmp_path, "train")


# Pair sampling ------------------------------------------------------------------


def test_partner_index_contract():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="outside sequence"):
        sample_partner_index(5, 5, 2, rng)
    # a window with neighbors never returns the anchor and respects delta_t
    for _ in range(500):
        seq_len = int(rng.integers(2, 12))
        anchor = int(rng.integers(0, seq_len))
        delta_t = int(rng.integers(1, 6))
        p = sample_partner_index(seq_len, anchor, delta_t, rng)
        assert 0 <= p < seq_len
        assert p != anchor
        assert abs(p - anchor) <= delta_t
    # single-frame window pairs the frame with itself
    assert sample_partner_index(1, 0, 3, rng) == 0


def test_partner_index_is_uniform_over_window():
    rng = np.random.default_rng(1)
    counts = {i: 0 for i in (1, 2, 4, 5)}  # anchor 3, delta_t 2, seq_len 8
    for _ in range(4000):
        counts[sample_partner_index(8, 3, 2, rng)] += 1
    assert set(counts) == {1, 2, 4, 5}
    for c in counts.values():
        assert 800 < c < 1200  # ~1000 each


def test_sample_pair_properties(tiny_dataset):
    dataset, _ = tiny_dataset
    rng = np.random.default_rng(2)
    cfg = SamplerConfig(delta_t=2)
    seen_sequences = set()
    for _ in range(200):
        pair = sample_pair(dataset, cfg, rng)
        assert pair.view1.seq_id == pair.view2.seq_id
        assert pair.offset == pair.view2.frame_idx - pair.view1.frame_idx
        assert 0 < abs(pair.offset) <= 2
        seen_sequences.add(pair.view1.seq_id)
    assert len(seen_sequences) == dataset.num_sequences  # anchors cover all sequences


def test_sample_pair_from_sequence(tiny_dataset):
    dataset, _ = tiny_dataset
    rng = np.random.default_rng(3)
    cfg = SamplerConfig(delta_t=1)
    pair = sample_pair_from_sequence(dataset, 1, cfg, rng, anchor=0)
    assert pair.view1 is dataset.sequences[1][0]
    assert abs(pair.offset) == 1
    for _ in range(50):
        p = sample_pair_from_sequence(dataset, 0, cfg, rng)
        assert p.view1.seq_id == dataset.sequences[0][0].seq_id


def test_sample_pair_empty_dataset():
    ds = SequenceDataset(split="t", sequences=())
    with pytest.raises(DatasetError, match="empty dataset"):
        sample_pair(ds, SamplerConfig(), np.random.default_rng(0))
