"""The two optimization objectives, as differentiable functions of the
channel weights.

Stage 1 drives the masked composite to reproduce the original input's
representation at the inversion layer (squared L2 feature distance plus
an L1 weight penalty). Stage 2 pushes the composite's probability for the
target class up while pushing the complement composite's probability down
(again with an L1 penalty).
"""

from dataclasses import dataclass

import torch

from .errors import InputError
from .image import ImageTensor
from .mask import build_mask, channel_mask, minmax_normalize, upsample_bilinear
from .perturbation import compose_background, compose_foreground


@dataclass(frozen=True)
class InversionTarget:
    """Detached feature grid of the original input at the inversion layer."""

    features: torch.Tensor
    element_count: int

    @classmethod
    def from_features(cls, features: torch.Tensor):
        return cls(features.detach(), features.numel())


@dataclass(frozen=True)
class LossBreakdown:
    """A loss total and its named parts, kept as raw values with the
    multiplier each one enters the total with."""

    total: float
    components: dict
    weights: dict

    def recombined(self) -> float:
        return sum(self.weights[k] * v for k, v in self.components.items())


def l1_norm(omega: torch.Tensor) -> torch.Tensor:
    """Sum of absolute entries, differentiable."""
    return omega.abs().sum()


def _mask_and_flag(omega, acts, spatial):
    raw = channel_mask(omega, acts)
    degenerate = bool(raw.max() == raw.min())
    m = upsample_bilinear(minmax_normalize(raw), spatial)
    return m, degenerate


def inversion_error(mask, x: ImageTensor, p, adapter, inversion_layer,
                    target: InversionTarget, normalize_by_count=False):
    """Squared L2 distance between the composite's and the original's
    features at the inversion layer, for an explicit mask.

    This is the mask-injection entry point used by unit tests; the
    solver-facing loss composes the mask from weights first.
    """
    phi = compose_foreground(x, mask, p)
    feats = adapter.forward_with_taps(phi, {inversion_layer}, detach=False)[inversion_layer]
    if feats.shape != target.features.shape:
        raise InputError(
            f"inversion target shape {tuple(target.features.shape)} does not "
            f"match features {tuple(feats.shape)}"
        )
    err = ((feats - target.features) ** 2).sum()
    if normalize_by_count:
        err = err / target.element_count
    return err


def masked_class_scores(mask, x: ImageTensor, p, adapter):
    """Class probabilities of the foreground and background composites.

    Returns a (2, C) tensor: row 0 for the foreground composite, row 1
    for the background composite. Both run in one batched forward.
    """
    phi = compose_foreground(x, mask, p)
    phi_bg = compose_background(x, mask, p)
    return adapter.class_prob(torch.stack([phi, phi_bg]), detach=False)


def inversion_loss(omega, x: ImageTensor, acts_l1, target: InversionTarget, p,
                   gamma, adapter, inversion_layer, normalize_by_count=False):
    """Stage-1 loss: feature reconstruction error + gamma * ||omega||_1.

    Returns (total tensor, LossBreakdown, degenerate flag).
    """
    if gamma < 0:
        raise InputError(f"gamma must be >= 0, got {gamma}")
    m, degenerate = _mask_and_flag(omega, acts_l1, x.spatial)
    err = inversion_error(m, x, p, adapter, inversion_layer, target,
                          normalize_by_count=normalize_by_count)
    penalty = l1_norm(omega)
    total = err + gamma * penalty
    breakdown = LossBreakdown(
        total=float(total.detach()),
        components={"inversion_error": float(err.detach()),
                    "l1_penalty": float(penalty.detach())},
        weights={"inversion_error": 1.0, "l1_penalty": float(gamma)},
    )
    return total, breakdown, degenerate


def target_loss(omega, x: ImageTensor, acts_l1, p, c, lam, delta, adapter):
    """Stage-2 loss: -p_c(foreground) + lam * p_c(background) + delta * ||omega||_1.

    Returns (total tensor, LossBreakdown, degenerate flag).
    """
    if lam < 0 or delta < 0:
        raise InputError(f"lam and delta must be >= 0, got {lam}, {delta}")
    c = int(c)
    if not 0 <= c < adapter.entry.n_classes:
        raise InputError(f"class index {c} out of range [0, {adapter.entry.n_classes})")
    m, degenerate = _mask_and_flag(omega, acts_l1, x.spatial)
    scores = masked_class_scores(m, x, p, adapter)
    fg, bg = scores[0, c], scores[1, c]
    penalty = l1_norm(omega)
    total = -fg + lam * bg + delta * penalty
    breakdown = LossBreakdown(
        total=float(total.detach()),
        components={"fg_activation": float(fg.detach()),
                    "bg_activation": float(bg.detach()),
                    "l1_penalty": float(penalty.detach())},
        weights={"fg_activation": -1.0, "bg_activation": float(lam),
                 "l1_penalty": float(delta)},
    )
    return total, breakdown, degenerate
