"""Finite-difference gradient verification.

Two entry points:

* :func:`grad_check` -- for a differentiable scalar function of a flat
  parameter vector.  Central differences ``(f(p + eps*e_i) - f(p - eps*e_i))
  / (2*eps)`` on a random coordinate subset are compared against the
  autograd gradient with the relative error
  ``|a - n| / max(|a|, |n|, 1e-8)``.
* :func:`grad_check_model` -- the same check for a loss computed through a
  ``torch.nn.Module``: the analytic gradient comes from one backward pass
  and coordinates are perturbed in place across the module's trainable
  parameters.

Run both in float64; float32 round-off alone can exceed tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn


@dataclass
class GradCheckResult:
    max_rel_error: float
    mean_rel_error: float
    num_coords: int
    num_params: int
    worst_coord: int
    loss: float

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error <= tolerance


def _relative_errors(analytic: torch.Tensor, numeric: torch.Tensor) -> torch.Tensor:
    denom = torch.maximum(
        torch.maximum(analytic.abs(), numeric.abs()),
        torch.full_like(analytic, 1e-8),
    )
    return (analytic - numeric).abs() / denom


def _pick_coords(n: int, num_samples: int, rng: np.random.Generator) -> np.ndarray:
    if n <= num_samples:
        return np.arange(n)
    return rng.choice(n, size=num_samples, replace=False)


def _summarize(
    analytic: torch.Tensor, numeric: torch.Tensor, coords: np.ndarray, n_params: int, loss: float
) -> GradCheckResult:
    rel = _relative_errors(analytic, numeric)
    worst = int(torch.argmax(rel))
    return GradCheckResult(
        max_rel_error=float(rel.max()),
        mean_rel_error=float(rel.mean()),
        num_coords=len(coords),
        num_params=n_params,
        worst_coord=int(coords[worst]),
        loss=loss,
    )


def grad_check(
    loss_fn,
    params: torch.Tensor,
    eps: float = 1e-4,
    num_samples: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Check ``d loss_fn / d params`` on a random coordinate subset.

    ``loss_fn`` must return a scalar tensor differentiable w.r.t. its input.
    """
    if params.ndim != 1:
        raise ValueError(f"params must be a flat vector, got shape {tuple(params.shape)}")
    rng = rng if rng is not None else np.random.default_rng(0)

    leaf = params.detach().clone().requires_grad_(True)
    loss = loss_fn(leaf)
    if loss.ndim != 0:
        raise ValueError("loss_fn must return a scalar")
    if not torch.isfinite(loss):
        raise ValueError(f"loss is not finite: {float(loss)}")
    (analytic_full,) = torch.autograd.grad(loss, leaf)

    coords = _pick_coords(leaf.numel(), num_samples, rng)
    analytic = analytic_full[coords].detach().clone()
    numeric = torch.empty_like(analytic)
    with torch.no_grad():
        base = leaf.detach().clone()
        for out_i, i in enumerate(coords):
            for sign, slot in ((+1.0, 0), (-1.0, 1)):
                perturbed = base.clone()
                perturbed[i] += sign * eps
                val = loss_fn(perturbed)
                if slot == 0:
                    f_plus = float(val)
                else:
                    f_minus = float(val)
            numeric[out_i] = (f_plus - f_minus) / (2.0 * eps)
    return _summarize(analytic, numeric, coords, leaf.numel(), float(loss.detach()))


def grad_check_model(
    model: nn.Module,
    compute_loss,
    eps: float = 1e-4,
    num_samples: int = 200,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Check gradients of ``compute_loss()`` w.r.t. the module's parameters.

    ``compute_loss`` is a closure evaluating the loss with the model's
    *current* parameter values (it is re-invoked after in-place
    perturbations).  Only parameters with ``requires_grad`` participate.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params = [p for p in model.parameters() if p.requires_grad]
    if not params:
        raise ValueError("model has no trainable parameters")
    flats = [p.detach().reshape(-1) for p in params]
    sizes = [f.numel() for f in flats]
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    total = int(offsets[-1])

    model.zero_grad(set_to_none=True)
    loss = compute_loss()
    if not torch.isfinite(loss):
        raise ValueError(f"loss is not finite: {float(loss)}")
    loss.backward()
    grads = torch.cat(
        [
            (p.grad if p.grad is not None else torch.zeros_like(p)).detach().reshape(-1)
            for p in params
        ]
    )

    coords = _pick_coords(total, num_samples, rng)
    analytic = grads[coords].clone()
    numeric = torch.empty_like(analytic)
    with torch.no_grad():
        for out_i, c in enumerate(coords):
            p_idx = int(np.searchsorted(offsets, c, side="right") - 1)
            local = int(c - offsets[p_idx])
            flat = params[p_idx].data.reshape(-1)
            orig = float(flat[local])
            flat[local] = orig + eps
            f_plus = float(compute_loss())
            flat[local] = orig - eps
            f_minus = float(compute_loss())
            flat[local] = orig
            numeric[out_i] = (f_plus - f_minus) / (2.0 * eps)
    model.zero_grad(set_to_none=True)
    return _summarize(analytic, numeric, coords, total, float(loss.detach()))
