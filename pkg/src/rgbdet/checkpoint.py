"""Binary checkpoint format: canonical JSON metadata + named float32 arrays.

Layout (all integers little-endian)::

    8 bytes   magic b"TIMCLR01" (6-byte family tag + 2-byte version)
    8 bytes   u64 metadata length
    N bytes   metadata: canonical JSON (sorted keys, no whitespace), UTF-8
    4 bytes   u32 array count
    per array, sorted by name:
        2 bytes   u16 name length, then the UTF-8 name
        1 byte    u8 ndim
        ndim * 8  u64 dimensions
        prod * 4  float32 payload (C order)

Canonical JSON plus name-sorted arrays make serialization a pure function
of the state: identical states produce identical bytes, and
``load -> save`` round-trips byte-for-byte.

Metadata carries the resolved config snapshot under ``"config"`` plus its
SHA-256 under ``"config_sha256"`` (added at save time, verified at load),
and the training state (epoch, step, seed, tail of the loss history).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from torch import nn

MAGIC = b"TIMCLR01"
_FAMILY = MAGIC[:6]


class CheckpointError(ValueError):
    """Raised for unreadable, corrupt, or mismatched checkpoints."""


@dataclass
class CheckpointState:
    meta: dict
    arrays: dict[str, np.ndarray] = field(default_factory=dict)


def _canonical_meta(meta: dict) -> bytes:
    try:
        return json.dumps(meta, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"metadata is not canonical-JSON serializable: {exc}") from None


def save_checkpoint(state: CheckpointState) -> bytes:
    """Serialize; fills in ``config_sha256`` when a config snapshot is present."""
    meta = dict(state.meta)
    if "config" in meta:
        canon = json.dumps(meta["config"], sort_keys=True, separators=(",", ":"))
        meta["config_sha256"] = _sha256_of_json(canon)
    blob = bytearray()
    blob += MAGIC
    meta_bytes = _canonical_meta(meta)
    blob += struct.pack("<Q", len(meta_bytes))
    blob += meta_bytes
    names = sorted(state.arrays)
    blob += struct.pack("<I", len(names))
    for name in names:
        # asarray keeps 0-d shapes (ascontiguousarray would promote them to 1-d)
        arr = np.asarray(state.arrays[name], dtype=np.float32, order="C")
        name_b = name.encode("utf-8")
        if len(name_b) > 0xFFFF:
            raise CheckpointError(f"array name too long: {name[:32]}...")
        if arr.ndim > 0xFF:
            raise CheckpointError(f"array {name} has too many dimensions: {arr.ndim}")
        blob += struct.pack("<H", len(name_b))
        blob += name_b
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<Q", dim)
        blob += arr.tobytes(order="C")
    return bytes(blob)


def _sha256_of_json(canon: str) -> str:
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError(f"truncated checkpoint while reading {what}")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u(self, fmt: str, what: str) -> int:
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size, what))[0]


def load_checkpoint(blob: bytes) -> CheckpointState:
    """Parse and validate a serialized checkpoint."""
    r = _Reader(blob)
    magic = r.take(8, "magic")
    if magic != MAGIC:
        if magic[:6] == _FAMILY:
            raise CheckpointError(f"unsupported checkpoint version tag {magic!r} (expected {MAGIC!r})")
        raise CheckpointError("not a checkpoint file (bad magic)")
    meta_len = r.u("<Q", "metadata length")
    meta_bytes = r.take(meta_len, "metadata")
    try:
        meta = json.loads(meta_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint metadata: {exc}") from None
    if not isinstance(meta, dict):
        raise CheckpointError("checkpoint metadata must be a JSON object")
    if "config" in meta:
        canon = json.dumps(meta["config"], sort_keys=True, separators=(",", ":"))
        expected = _sha256_of_json(canon)
        if meta.get("config_sha256") != expected:
            raise CheckpointError("checkpoint config hash mismatch (corrupt or tampered)")
    n_arrays = r.u("<I", "array count")
    arrays: dict[str, np.ndarray] = {}
    prev_name = None
    for _ in range(n_arrays):
        name_len = r.u("<H", "array name length")
        name = r.take(name_len, "array name").decode("utf-8")
        if prev_name is not None and name <= prev_name:
            raise CheckpointError(f"array names out of order: {name!r} after {prev_name!r}")
        prev_name = name
        ndim = r.u("<B", f"array {name} ndim")
        shape = tuple(r.u("<Q", f"array {name} shape") for _ in range(ndim))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = r.take(count * 4, f"array {name} payload")
        arrays[name] = np.frombuffer(payload, dtype="<f4").reshape(shape).copy()
    if r.pos != len(blob):
        raise CheckpointError(f"trailing data after checkpoint payload ({len(blob) - r.pos} bytes)")
    return CheckpointState(meta=meta, arrays=arrays)


def write_checkpoint(state: CheckpointState, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(save_checkpoint(state))


def read_checkpoint(path: str | Path) -> CheckpointState:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint file not found: {path}")
    return load_checkpoint(path.read_bytes())


# ---------------------------------------------------------------------------
# Module <-> array-dict bridges
# ---------------------------------------------------------------------------


def arrays_from_module(module: nn.Module, prefix: str) -> dict[str, np.ndarray]:
    """Module state -> named float32 arrays with ``prefix`` prepended."""
    out = {}
    for name, tensor in module.state_dict().items():
        out[prefix + name] = tensor.detach().cpu().numpy().astype(np.float32, copy=True)
    return out


def load_module_arrays(module: nn.Module, arrays: dict[str, np.ndarray], prefix: str) -> None:
    """Restore module state from named arrays, validating names and shapes."""
    state = module.state_dict()
    wanted = {prefix + name for name in state}
    have = {n for n in arrays if n.startswith(prefix)}
    missing = sorted(wanted - have)
    extra = sorted(have - wanted)
    if missing or extra:
        parts = []
        if missing:
            parts.append(f"missing arrays: {missing[:3]}")
        if extra:
            parts.append(f"unexpected arrays: {extra[:3]}")
        raise CheckpointError("; ".join(parts))
    new_state = {}
    for name, tensor in state.items():
        arr = arrays[prefix + name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise CheckpointError(
                f"array {prefix + name} has shape {tuple(arr.shape)}, "
                f"module expects {tuple(tensor.shape)}"
            )
        new_state[name] = torch.from_numpy(np.ascontiguousarray(arr)).to(tensor.dtype)
    module.load_state_dict(new_state)
