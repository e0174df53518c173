"""Frame containers, the on-disk dataset layout, and temporal pair sampling.

Disk layout (one directory per split)::

    <root>/<split>/<seq_id>/rgb/000000.png    8-bit, 3-channel
    <root>/<split>/<seq_id>/depth/000000.png  16-bit, 1-channel, millimeters
    <root>/<split>/annotations.json           optional ground-truth boxes

Frame indices come from the zero-padded filenames and must line up 1:1
between the ``rgb`` and ``depth`` subdirectories of a sequence.

Temporal pair sampling picks an anchor frame uniformly over all frames of
all sequences, then a partner frame from the same sequence at a uniformly
drawn offset within ``[-delta_t, +delta_t]``, clipped to the sequence
bounds.  Pairs never cross sequence boundaries.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .config import SamplerConfig


class DatasetError(ValueError):
    """Raised for malformed dataset trees or undecodable frames."""


_FRAME_RE = re.compile(r"^(\d{6})\.png$")


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Frame:
    """One synchronized RGB-D frame.

    ``rgb``   -- (H, W, 3) uint8
    ``depth`` -- (H, W) uint16, millimeters
    """

    rgb: np.ndarray
    depth: np.ndarray
    seq_id: str
    frame_idx: int

    def __post_init__(self) -> None:
        if self.rgb.ndim != 3 or self.rgb.shape[2] != 3 or self.rgb.dtype != np.uint8:
            raise DatasetError(
                f"frame {self.seq_id}/{self.frame_idx}: rgb must be (H, W, 3) uint8, "
                f"got shape {self.rgb.shape} dtype {self.rgb.dtype}"
            )
        if self.depth.ndim != 2 or self.depth.dtype != np.uint16:
            raise DatasetError(
                f"frame {self.seq_id}/{self.frame_idx}: depth must be (H, W) uint16, "
                f"got shape {self.depth.shape} dtype {self.depth.dtype}"
            )
        if self.rgb.shape[:2] != self.depth.shape:
            raise DatasetError(
                f"frame {self.seq_id}/{self.frame_idx}: rgb {self.rgb.shape[:2]} and "
                f"depth {self.depth.shape} dimensions differ"
            )


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, x_max/y_max exclusive-ish edges."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float
    class_id: int = 0

    def __post_init__(self) -> None:
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise DatasetError(
                f"degenerate box: ({self.x_min}, {self.y_min}, {self.x_max}, {self.y_max})"
            )
        if self.class_id < 0:
            raise DatasetError(f"negative class_id {self.class_id}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x_min + self.x_max), 0.5 * (self.y_min + self.y_max))

    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max], dtype=np.float64)


@dataclass(frozen=True)
class AnnotatedFrame:
    """A frame plus its ground-truth boxes."""

    frame: Frame
    boxes: tuple[BBox, ...]


@dataclass(frozen=True)
class SequenceDataset:
    """All sequences of one split, each a list of frames in temporal order."""

    split: str
    sequences: tuple[tuple[Frame, ...], ...]

    def __post_init__(self) -> None:
        for seq in self.sequences:
            if not seq:
                raise DatasetError(f"split {self.split!r}: empty sequence")
            ids = {f.seq_id for f in seq}
            if len(ids) != 1:
                raise DatasetError(f"split {self.split!r}: mixed seq_ids in one sequence: {sorted(ids)}")
            idxs = [f.frame_idx for f in seq]
            if idxs != sorted(idxs) or len(set(idxs)) != len(idxs):
                raise DatasetError(f"sequence {seq[0].seq_id}: frame indices not strictly increasing")

    @property
    def num_sequences(self) -> int:
        return len(self.sequences)

    @property
    def num_frames(self) -> int:
        return sum(len(s) for s in self.sequences)

    def all_frames(self) -> list[Frame]:
        return [f for seq in self.sequences for f in seq]


@dataclass(frozen=True)
class PairSample:
    """A temporal pair: anchor frame and partner frame from the same sequence."""

    view1: Frame
    view2: Frame
    offset: int  # view2.frame_idx - view1.frame_idx

    def __post_init__(self) -> None:
        if self.view1.seq_id != self.view2.seq_id:
            raise DatasetError("pair crosses sequence boundary")
        if self.view2.frame_idx - self.view1.frame_idx != self.offset:
            raise DatasetError("pair offset inconsistent with frame indices")


# ---------------------------------------------------------------------------
# Disk I/O
# ---------------------------------------------------------------------------


def _read_rgb(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if img is None:
        raise DatasetError(f"cannot decode image: {path}")
    return cv2.cvtColor(img, cv2.COLOR_BGR2RGB)


def _read_depth(path: Path) -> np.ndarray:
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"cannot decode image: {path}")
    if img.ndim != 2 or img.dtype != np.uint16:
        raise DatasetError(f"depth image must be single-channel 16-bit: {path}")
    return img


def _frame_files(directory: Path) -> dict[int, Path]:
    out: dict[int, Path] = {}
    for p in sorted(directory.iterdir()):
        m = _FRAME_RE.match(p.name)
        if m:
            out[int(m.group(1))] = p
    return out


def load_sequences(root: str | Path, split: str) -> SequenceDataset:
    """Load every sequence of ``<root>/<split>/`` into memory."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise DatasetError(f"no sequences found: {split_dir} is not a directory")
    seq_dirs = sorted(p for p in split_dir.iterdir() if p.is_dir())
    if not seq_dirs:
        raise DatasetError(f"no sequences found under {split_dir}")
    sequences = []
    for seq_dir in seq_dirs:
        rgb_dir, depth_dir = seq_dir / "rgb", seq_dir / "depth"
        if not rgb_dir.is_dir() or not depth_dir.is_dir():
            raise DatasetError(f"sequence {seq_dir} is missing an rgb/ or depth/ directory")
        rgb_files, depth_files = _frame_files(rgb_dir), _frame_files(depth_dir)
        if not rgb_files:
            raise DatasetError(f"no frames found under {rgb_dir}")
        if set(rgb_files) != set(depth_files):
            missing = sorted(set(rgb_files) ^ set(depth_files))[:5]
            raise DatasetError(
                f"sequence {seq_dir.name}: rgb/depth frame indices differ (e.g. {missing})"
            )
        frames = tuple(
            Frame(
                rgb=_read_rgb(rgb_files[i]),
                depth=_read_depth(depth_files[i]),
                seq_id=seq_dir.name,
                frame_idx=i,
            )
            for i in sorted(rgb_files)
        )
        sequences.append(frames)
    return SequenceDataset(split=split, sequences=tuple(sequences))


def save_sequences(dataset: SequenceDataset, root: str | Path) -> None:
    """Write a dataset back out in the canonical tree layout."""
    split_dir = Path(root) / dataset.split
    for seq in dataset.sequences:
        rgb_dir = split_dir / seq[0].seq_id / "rgb"
        depth_dir = split_dir / seq[0].seq_id / "depth"
        rgb_dir.mkdir(parents=True, exist_ok=True)
        depth_dir.mkdir(parents=True, exist_ok=True)
        for f in seq:
            ok1 = cv2.imwrite(
                str(rgb_dir / f"{f.frame_idx:06d}.png"), cv2.cvtColor(f.rgb, cv2.COLOR_RGB2BGR)
            )
            ok2 = cv2.imwrite(str(depth_dir / f"{f.frame_idx:06d}.png"), f.depth)
            if not (ok1 and ok2):
                raise DatasetError(f"failed to write frame {f.seq_id}/{f.frame_idx}")


Annotations = dict[tuple[str, int], tuple[BBox, ...]]


def save_annotations(annotations: Annotations, root: str | Path, split: str) -> None:
    """Write ground-truth boxes as ``<root>/<split>/annotations.json``."""
    payload = [
        {
            "seq_id": seq_id,
            "frame_idx": frame_idx,
            "boxes": [
                {
                    "x_min": b.x_min,
                    "y_min": b.y_min,
                    "x_max": b.x_max,
                    "y_max": b.y_max,
                    "class_id": b.class_id,
                }
                for b in boxes
            ],
        }
        for (seq_id, frame_idx), boxes in sorted(annotations.items())
    ]
    path = Path(root) / split / "annotations.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_annotations(root: str | Path, split: str) -> Annotations:
    path = Path(root) / split / "annotations.json"
    if not path.is_file():
        raise DatasetError(f"annotation file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"annotation file is not valid JSON: {path}: {exc}") from None
    out: Annotations = {}
    for rec in payload:
        boxes = tuple(
            BBox(b["x_min"], b["y_min"], b["x_max"], b["y_max"], int(b["class_id"]))
            for b in rec["boxes"]
        )
        out[(rec["seq_id"], int(rec["frame_idx"]))] = boxes
    return out


def load_annotated_frames(root: str | Path, split: str) -> list[AnnotatedFrame]:
    """Join frames with their annotations (frames without boxes get empty tuples)."""
    dataset = load_sequences(root, split)
    ann = load_annotations(root, split)
    return [
        AnnotatedFrame(frame=f, boxes=ann.get((f.seq_id, f.frame_idx), ()))
        for f in dataset.all_frames()
    ]


# ---------------------------------------------------------------------------
# Temporal pair sampling
# ---------------------------------------------------------------------------


def sample_partner_index(seq_len: int, anchor: int, delta_t: int, rng: np.random.Generator) -> int:
    """Uniform partner index within ``[anchor-delta_t, anchor+delta_t]``.

    Clipped to ``[0, seq_len)``; the anchor itself is excluded whenever the
    window contains any other frame (a length-1 sequence pairs a frame with
    itself).
    """
    if not 0 <= anchor < seq_len:
        raise ValueError(f"anchor {anchor} outside sequence of length {seq_len}")
    lo = max(0, anchor - delta_t)
    hi = min(seq_len - 1, anchor + delta_t)
    if hi == lo:  # window holds only the anchor
        return anchor
    # window size excluding the anchor
    n = hi - lo  # (hi - lo + 1) candidates minus the anchor itself
    k = int(rng.integers(0, n))
    idx = lo + k
    if idx >= anchor:
        idx += 1  # skip over the anchor
    return idx


def sample_pair(dataset: SequenceDataset, cfg: SamplerConfig, rng: np.random.Generator) -> PairSample:
    """Draw one temporal pair: uniform anchor over all frames, then a partner."""
    total = dataset.num_frames
    if total == 0:
        raise DatasetError("cannot sample from an empty dataset")
    flat = int(rng.integers(0, total))
    for i, seq in enumerate(dataset.sequences):
        if flat < len(seq):
            return sample_pair_from_sequence(dataset, i, cfg, rng, anchor=flat)
        flat -= len(seq)
    raise AssertionError("unreachable")  # pragma: no cover


def sample_pair_from_sequence(
    dataset: SequenceDataset,
    seq_index: int,
    cfg: SamplerConfig,
    rng: np.random.Generator,
    anchor: int | None = None,
) -> PairSample:
    """Draw one temporal pair from a specific sequence (uniform anchor if unset)."""
    seq = dataset.sequences[seq_index]
    if anchor is None:
        anchor = int(rng.integers(0, len(seq)))
    partner = sample_partner_index(len(seq), anchor, cfg.delta_t, rng)
    return PairSample(
        view1=seq[anchor], view2=seq[partner], offset=seq[partner].frame_idx - seq[anchor].frame_idx
    )
