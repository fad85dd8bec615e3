"""Saliency mask from channel weights.

The mask is a nonnegative weighted sum of the channel activation maps at
a high convolutional layer, min-max normalized into [0, 1] and bilinearly
upsampled to the input resolution. Everything here is differentiable in
the weights (min-max passes gradients through its extremal entries), so
the optimizer can move the weights directly.
"""

import torch
import torch.nn.functional as F

from .errors import InputError


def channel_mask(omega: torch.Tensor, acts: torch.Tensor) -> torch.Tensor:
    """Weighted sum of channel maps: sum_i omega_i * acts[i]."""
    if omega.ndim != 1 or acts.ndim != 3 or omega.shape[0] != acts.shape[0]:
        raise InputError(
            f"need weights (n,) matching activations (n, h, w); "
            f"got {tuple(omega.shape)} and {tuple(acts.shape)}"
        )
    return (omega[:, None, None] * acts).sum(dim=0)


def minmax_normalize(grid: torch.Tensor) -> torch.Tensor:
    """(grid - min) / (max - min); a constant grid maps to all zeros."""
    if not torch.isfinite(grid).all():
        raise InputError("grid contains NaN or Inf")
    lo = grid.min()
    hi = grid.max()
    if hi == lo:
        return torch.zeros_like(grid)
    return (grid - lo) / (hi - lo)


def upsample_bilinear(grid: torch.Tensor, target) -> torch.Tensor:
    """Corner-aligned bilinear interpolation to the target (H, W)."""
    th, tw = int(target[0]), int(target[1])
    sh, sw = grid.shape
    if th < sh or tw < sw:
        raise InputError(f"target {target} smaller than source {(sh, sw)}")
    if (th, tw) == (sh, sw):
        return grid
    return F.interpolate(grid[None, None], size=(th, tw), mode="bilinear",
                         align_corners=True)[0, 0]


def is_degenerate(omega: torch.Tensor, acts: torch.Tensor) -> bool:
    """True when the raw weighted sum is constant (min-max would divide by 0)."""
    raw = channel_mask(omega, acts)
    return bool(raw.max() == raw.min())


def build_mask(omega: torch.Tensor, acts: torch.Tensor, target) -> torch.Tensor:
    """Full pipeline: weighted channel sum -> min-max -> bilinear upsample."""
    return upsample_bilinear(minmax_normalize(channel_mask(omega, acts)), target)


def clip_nonneg(omega: torch.Tensor) -> torch.Tensor:
    """Entrywise max(omega, 0)."""
    return omega.clamp(min=0)
