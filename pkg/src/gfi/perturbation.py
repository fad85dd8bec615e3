"""Uninformative background images and mask-blended composites.

The foreground composite keeps the masked part of the input and fills the
rest with a background image p; the background composite is its
complement. Three background choices are supported: the dataset-mean gray
image, seeded Gaussian white noise, and a Gaussian blur of the input
itself (the default).
"""

import enum
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from .errors import ConfigurationError, InputError
from .image import ImageTensor, normalize_pixels

# gray-mean uses the preprocessing mean itself, so it normalizes to zero
GRAY_NOISE_CENTER = 0.5
GRAY_NOISE_STD = 0.25


class BaselineKind(enum.Enum):
    GRAY = "gray"
    NOISE = "noise"
    BLUR = "blur"


@dataclass(frozen=True)
class BaselineSpec:
    """Which background image to build and how."""

    kind: BaselineKind = BaselineKind.BLUR
    blur_radius: int = 11
    noise_seed: int = 0

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", BaselineKind(self.kind))
        if self.blur_radius < 1:
            raise ConfigurationError(f"blur radius must be >= 1, got {self.blur_radius}")


def gaussian_blur_pixels(pixel: np.ndarray, radius: int) -> np.ndarray:
    """Blur a (C, H, W) pixel array with a normalized Gaussian kernel.

    Kernel convention: sigma = radius / 2.2, window 2*radius + 1,
    reflected edges.
    """
    sigma = radius / 2.2
    out = np.empty_like(pixel)
    for ch in range(pixel.shape[0]):
        out[ch] = ndimage.gaussian_filter(pixel[ch], sigma=sigma, truncate=2.2,
                                          mode="reflect")
    return out


def make_baseline(spec: BaselineSpec, x: ImageTensor) -> torch.Tensor:
    """Build the background image p for an input, in normalized space."""
    dtype = x.normalized.dtype
    if spec.kind is BaselineKind.GRAY:
        pixel = torch.as_tensor(x.mean, dtype=dtype).view(-1, 1, 1).expand_as(x.pixel)
        pixel = pixel.contiguous()
    elif spec.kind is BaselineKind.NOISE:
        gen = torch.Generator().manual_seed(spec.noise_seed)
        noise = torch.randn(x.pixel.shape, generator=gen, dtype=dtype)
        pixel = (GRAY_NOISE_CENTER + GRAY_NOISE_STD * noise).clamp(0.0, 1.0)
    elif spec.kind is BaselineKind.BLUR:
        blurred = gaussian_blur_pixels(x.pixel.numpy(), spec.blur_radius)
        pixel = torch.from_numpy(blurred).to(dtype)
    else:  # pragma: no cover
        raise ConfigurationError(f"unknown baseline kind {spec.kind!r}")
    return normalize_pixels(pixel, x.mean, x.std)


def _blend_operands(x, m, p):
    t = x.normalized if isinstance(x, ImageTensor) else x
    if m.ndim != 2 or m.shape != t.shape[-2:]:
        raise InputError(
            f"mask shape {tuple(m.shape)} does not match image spatial "
            f"shape {tuple(t.shape[-2:])}"
        )
    if p.shape != t.shape:
        raise InputError(
            f"baseline shape {tuple(p.shape)} does not match image shape {tuple(t.shape)}"
        )
    return t, m[None], p


def compose_foreground(x, m: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """x * m + p * (1 - m), the mask-preserved part of the input.

    Works in normalized space and is differentiable in m; the mask is
    broadcast across channels.
    """
    t, m, p = _blend_operands(x, m, p)
    return t * m + p * (1.0 - m)


def compose_background(x, m: torch.Tensor, p: torch.Tensor) -> torch.Tensor:
    """x * (1 - m) + p * m, the complement composite."""
    t, m, p = _blend_operands(x, m, p)
    return t * (1.0 - m) + p * m
