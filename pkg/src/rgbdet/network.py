"""Fused RGB-D encoder, projection heads, and the momentum encoder pair.

Topology (default ``fuse_at="C3"``)::

    rgb  (N,3,H,W) -> C1 -> C2 -> C3 ---\
                                         concat -> 1x1 conv -> C4 -> C5 -> pool -> head_rgbd
    depth(N,1,H,W) -> C1 -> C2 -> C3 ---/
                         |                   pooled C3 (rgb)   -> head_rgb
                         |                   pooled C3 (depth) -> head_depth

Stages: C1 is conv-norm-relu stride 2; C2..C5 are single residual blocks
(two 3x3 convs + projection shortcut) each with stride 2, so C5 sits at
stride 32.  ``fuse_at`` may also be ``"C4"`` or ``"C5"``: the per-modality
stems then extend through that stage and the unimodal heads read the pooled
per-modality maps at the fusion stage.

GroupNorm is used throughout: it is batch-independent (per-sample outputs do
not depend on batch composition) and has no running buffers, which keeps
momentum averaging a pure parameter-space operation and keeps training
bitwise reproducible.

Weight init: normal with std sqrt(1/fan_in) for conv/linear weights (unit
output variance before the ReLU halving), zeros for biases, ones/zeros for
norm affine parameters -- all drawn from a local generator seeded by the
caller, never from global RNG state.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
from torch import nn

from .config import BlockConfig

_FUSE_INDEX = {"C3": 3, "C4": 4, "C5": 5}


def _group_norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(4 if channels % 4 == 0 else 1, channels)


class ConvNormAct(nn.Module):
    """3x3 conv -> GroupNorm -> ReLU."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1, kernel: int = 3):
        super().__init__()
        self.conv = nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2, bias=False)
        self.norm = _group_norm(c_out)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.act(self.norm(self.conv(x)))


class ResidualBlock(nn.Module):
    """Two 3x3 convs with a projection shortcut when shape changes."""

    def __init__(self, c_in: int, c_out: int, stride: int = 1):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.norm1 = _group_norm(c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, stride=1, padding=1, bias=False)
        self.norm2 = _group_norm(c_out)
        self.act = nn.ReLU(inplace=True)
        if stride != 1 or c_in != c_out:
            self.shortcut: nn.Module = nn.Sequential(
                nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), _group_norm(c_out)
            )
        else:
            self.shortcut = nn.Identity()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        out = self.act(self.norm1(self.conv1(x)))
        out = self.norm2(self.conv2(out))
        return self.act(out + self.shortcut(x))


def make_stage(index: int, c_in: int, c_out: int) -> nn.Module:
    """Stage ``C<index>``: a strided stem conv for C1, a residual block after."""
    if index == 1:
        return ConvNormAct(c_in, c_out, stride=2)
    return ResidualBlock(c_in, c_out, stride=2)


class ProjectionHead(nn.Module):
    """2-layer MLP (hidden = 2 * out) with L2-normalized output."""

    def __init__(self, c_in: int, out_dim: int):
        super().__init__()
        self.fc1 = nn.Linear(c_in, 2 * out_dim)
        self.act = nn.ReLU(inplace=True)
        self.fc2 = nn.Linear(2 * out_dim, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.fc2(self.act(self.fc1(x)))
        return nn.functional.normalize(z, dim=1, eps=1e-12)


@dataclass
class RepTriple:
    """L2-normalized representations of one batch: fused, RGB-only, depth-only."""

    rgbd: torch.Tensor  # (N, rep_dim)
    rgb: torch.Tensor  # (N, rep_dim)
    depth: torch.Tensor  # (N, rep_dim)


@dataclass
class FeatureMaps:
    """Intermediate maps for the detection path (C3-fusion encoders only)."""

    c3_rgb: torch.Tensor
    c3_depth: torch.Tensor
    c3_fused: torch.Tensor  # post-fusion map at stride 8
    c4: torch.Tensor  # stride 16
    c5: torch.Tensor  # stride 32


def _pool(x: torch.Tensor) -> torch.Tensor:
    return torch.flatten(nn.functional.adaptive_avg_pool2d(x, 1), 1)


class RgbdEncoder(nn.Module):
    """Two modality stems, a 1x1 fusion conv, shared tail stages, three heads."""

    def __init__(self, blocks: BlockConfig, fuse_at: str = "C3"):
        super().__init__()
        if fuse_at not in _FUSE_INDEX:
            raise ValueError(f"fuse_at must be one of {sorted(_FUSE_INDEX)}, got {fuse_at!r}")
        self.blocks = blocks
        self.fuse_at = fuse_at
        fuse_i = _FUSE_INDEX[fuse_at]
        widths = blocks.widths

        def stem(c_in: int) -> nn.Sequential:
            layers = []
            prev = c_in
            for i in range(1, fuse_i + 1):
                layers.append(make_stage(i, prev, widths[i - 1]))
                prev = widths[i - 1]
            return nn.Sequential(*layers)

        self.rgb_stem = stem(3)
        self.depth_stem = stem(1)
        fuse_w = widths[fuse_i - 1]
        self.fusion = nn.Conv2d(2 * fuse_w, fuse_w, 1)
        tail = []
        prev = fuse_w
        for i in range(fuse_i + 1, 6):
            tail.append(make_stage(i, prev, widths[i - 1]))
            prev = widths[i - 1]
        self.shared = nn.Sequential(*tail)
        self.head_rgbd = ProjectionHead(widths[4], blocks.rep_dim)
        self.head_rgb = ProjectionHead(fuse_w, blocks.rep_dim)
        self.head_depth = ProjectionHead(fuse_w, blocks.rep_dim)

    def _validate(self, rgb: torch.Tensor, depth: torch.Tensor) -> None:
        if rgb.ndim != 4 or rgb.shape[1] != 3:
            raise ValueError(f"rgb must be (N, 3, H, W), got {tuple(rgb.shape)}")
        if depth.ndim != 4 or depth.shape[1] != 1:
            raise ValueError(f"depth must be (N, 1, H, W), got {tuple(depth.shape)}")
        if rgb.shape[0] != depth.shape[0] or rgb.shape[2:] != depth.shape[2:]:
            raise ValueError(
                f"rgb {tuple(rgb.shape)} and depth {tuple(depth.shape)} batch/spatial dims differ"
            )
        if rgb.shape[2] % 32 or rgb.shape[3] % 32:
            raise ValueError(f"spatial size must be divisible by 32, got {tuple(rgb.shape[2:])}")
        if not torch.isfinite(rgb).all() or not torch.isfinite(depth).all():
            raise ValueError("non-finite values in encoder input")

    def forward(self, rgb: torch.Tensor, depth: torch.Tensor) -> RepTriple:
        self._validate(rgb, depth)
        m_rgb = self.rgb_stem(rgb)
        m_depth = self.depth_stem(depth)
        fused = self.fusion(torch.cat([m_rgb, m_depth], dim=1))
        top = self.shared(fused)
        return RepTriple(
            rgbd=self.head_rgbd(_pool(top)),
            rgb=self.head_rgb(_pool(m_rgb)),
            depth=self.head_depth(_pool(m_depth)),
        )

    encode = forward

    def forward_features(self, rgb: torch.Tensor, depth: torch.Tensor) -> FeatureMaps:
        """Stride-8/16/32 maps for detection; requires ``fuse_at == "C3"``."""
        if self.fuse_at != "C3":
            raise ValueError(f"forward_features requires C3 fusion, this encoder fuses at {self.fuse_at}")
        self._validate(rgb, depth)
        c3_rgb = self.rgb_stem(rgb)
        c3_depth = self.depth_stem(depth)
        c3_fused = self.fusion(torch.cat([c3_rgb, c3_depth], dim=1))
        c4 = self.shared[0](c3_fused)
        c5 = self.shared[1](c4)
        return FeatureMaps(c3_rgb=c3_rgb, c3_depth=c3_depth, c3_fused=c3_fused, c4=c4, c5=c5)


def init_weights(model: nn.Module, seed: int) -> None:
    """Deterministically (re)initialize all parameters from a local generator.

    Conv/linear weights ~ N(0, 1/fan_in); biases 0; norm affine 1/0.
    Module traversal order is registration order, so a given architecture +
    seed always yields identical parameters.
    """
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv2d, nn.Linear)):
                fan_in = m.weight[0].numel()
                m.weight.normal_(0.0, (1.0 / fan_in) ** 0.5, generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.GroupNorm):
                m.weight.fill_(1.0)
                m.bias.zero_()


def build_encoder(blocks: BlockConfig, seed: int, fuse_at: str = "C3") -> RgbdEncoder:
    model = RgbdEncoder(blocks, fuse_at=fuse_at)
    init_weights(model, seed)
    return model


def partition_parameters(model: RgbdEncoder) -> dict[str, list[str]]:
    """Partition parameter names into rgb / depth / rgbd / heads groups."""
    groups: dict[str, list[str]] = {"rgb": [], "depth": [], "rgbd": [], "heads": []}
    for name, _ in model.named_parameters():
        if name.startswith("rgb_stem."):
            groups["rgb"].append(name)
        elif name.startswith("depth_stem."):
            groups["depth"].append(name)
        elif name.startswith(("fusion.", "shared.")):
            groups["rgbd"].append(name)
        elif name.startswith("head_"):
            groups["heads"].append(name)
        else:  # pragma: no cover - architecture change guard
            raise AssertionError(f"unpartitioned parameter {name}")
    return groups


@dataclass
class EncoderPair:
    """Query encoder (gradient-trained) and key encoder (momentum-averaged)."""

    query: RgbdEncoder
    key: RgbdEncoder
    momentum: float

    @staticmethod
    def create(blocks: BlockConfig, seed: int, momentum: float, fuse_at: str = "C3") -> "EncoderPair":
        query = build_encoder(blocks, seed, fuse_at=fuse_at)
        key = copy.deepcopy(query)
        for p in key.parameters():
            p.requires_grad_(False)
        return EncoderPair(query=query, key=key, momentum=momentum)


def momentum_update(pair: EncoderPair) -> None:
    """key <- m * key + (1 - m) * query, elementwise over aligned parameters."""
    if not 0.0 <= pair.momentum <= 1.0:
        raise ValueError(f"momentum must be in [0, 1], got {pair.momentum}")
    with torch.no_grad():
        q_params = list(pair.query.named_parameters())
        k_params = list(pair.key.named_parameters())
        if len(q_params) != len(k_params):
            raise ValueError("query/key parameter lists differ in length")
        for (qn, qp), (kn, kp) in zip(q_params, k_params):
            if qn != kn or qp.shape != kp.shape:
                raise ValueError(f"query/key parameter mismatch: {qn} vs {kn}")
            kp.mul_(pair.momentum).add_(qp, alpha=1.0 - pair.momentum)
