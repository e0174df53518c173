"""Contrastive objectives over batched representation triples.

``info_nce`` is the temperature-scaled contrastive loss

    -log( exp(q_i . k_i / tau) / sum_j exp(q_i . k_j / tau) )

averaged over the batch: row ``i`` of the queries must score its own key
above every other key in the batch.  Keys are gradient-detached -- only the
query encoder receives gradients; the key encoder is updated by momentum
averaging instead.

The combined objective sums a fused-representation term (both view
directions) and two crossmodal terms that tie each sample's RGB
representation of one view to its depth representation of the other view
(and vice versa); negatives for the crossmodal terms come exclusively from
the opposite modality.  Term weights and the temperature live in
:class:`~rgbdet.config.LossConfig`.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .config import LossConfig
from .network import RepTriple


@dataclass
class RepBatch:
    """Query/key representation triples for both views of a pair batch."""

    q1: RepTriple  # query encoder on view 1
    q2: RepTriple  # query encoder on view 2
    k1: RepTriple  # key encoder on view 1
    k2: RepTriple  # key encoder on view 2


def info_nce(queries: torch.Tensor, keys: torch.Tensor, tau: float) -> torch.Tensor:
    """Batch-mean contrastive loss; ``queries[i]`` matches ``keys[i]``.

    Keys are detached here, so callers may pass key tensors that still carry
    a graph.  A batch of one has no negatives and scores exactly zero.
    """
    if tau <= 0.0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if queries.ndim != 2 or keys.ndim != 2 or queries.shape != keys.shape:
        raise ValueError(
            f"queries and keys must be matching (N, d) tensors, got "
            f"{tuple(queries.shape)} and {tuple(keys.shape)}"
        )
    if queries.shape[0] == 0:
        raise ValueError("empty batch")
    logits = queries @ keys.detach().t() / tau
    targets = torch.arange(queries.shape[0], device=queries.device)
    return F.cross_entropy(logits, targets)


def loss_rgbd(batch: RepBatch, cfg: LossConfig) -> torch.Tensor:
    """Fused-representation term, symmetrized over the two views."""
    return info_nce(batch.q1.rgbd, batch.k2.rgbd, cfg.tau) + info_nce(
        batch.q2.rgbd, batch.k1.rgbd, cfg.tau
    )


def loss_crossmodal(batch: RepBatch, cfg: LossConfig) -> tuple[torch.Tensor, torch.Tensor]:
    """(RGB queries vs depth keys, depth queries vs RGB keys), symmetrized."""
    rgb_to_depth = info_nce(batch.q1.rgb, batch.k2.depth, cfg.tau) + info_nce(
        batch.q2.rgb, batch.k1.depth, cfg.tau
    )
    depth_to_rgb = info_nce(batch.q1.depth, batch.k2.rgb, cfg.tau) + info_nce(
        batch.q2.depth, batch.k1.rgb, cfg.tau
    )
    return rgb_to_depth, depth_to_rgb


def loss_mcl(batch: RepBatch, cfg: LossConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """Weighted sum of the fused and crossmodal terms.

    Returns the scalar loss plus a float breakdown for logging.  Terms with
    zero weight are skipped entirely (no wasted compute, no graph edges).
    """
    total = torch.zeros((), dtype=batch.q1.rgbd.dtype, device=batch.q1.rgbd.device)
    parts = {"loss_rgbd": 0.0, "loss_rgb_d": 0.0, "loss_d_rgb": 0.0}
    if cfg.lambda_rgbd > 0.0:
        term = loss_rgbd(batch, cfg)
        parts["loss_rgbd"] = float(term.detach())
        total = total + cfg.lambda_rgbd * term
    if cfg.lambda_rgb_d > 0.0:
        term = info_nce(batch.q1.rgb, batch.k2.depth, cfg.tau) + info_nce(
            batch.q2.rgb, batch.k1.depth, cfg.tau
        )
        parts["loss_rgb_d"] = float(term.detach())
        total = total + cfg.lambda_rgb_d * term
    if cfg.lambda_d_rgb > 0.0:
        term = info_nce(batch.q1.depth, batch.k2.rgb, cfg.tau) + info_nce(
            batch.q2.depth, batch.k1.rgb, cfg.tau
        )
        parts["loss_d_rgb"] = float(term.detach())
        total = total + cfg.lambda_d_rgb * term
    return total, parts
