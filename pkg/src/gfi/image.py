"""Preprocessed input images.

An input lives in two coupled spaces: the pixel space (values in [0, 1],
what files and baselines are built from) and the normalized space the
model consumes ((v - mean) / std per channel). Both twins are kept so
blending, rendering, and attacks can pick the right one.
"""

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InputError


@dataclass
class ImageTensor:
    """A model input: normalized tensor plus its pixel-space twin.

    Attributes:
        normalized: (C, H, W) float tensor in the model's input space.
        pixel: (C, H, W) float tensor in [0, 1].
        mean: per-channel normalization mean.
        std: per-channel normalization std.
        source_path: file the image came from, if any.
        source_size: (width, height) of the original file, if any.
    """

    normalized: torch.Tensor
    pixel: torch.Tensor
    mean: tuple
    std: tuple
    source_path: str | None = None
    source_size: tuple | None = None

    def __post_init__(self):
        if self.normalized.shape != self.pixel.shape:
            raise InputError(
                f"normalized/pixel shape mismatch: "
                f"{tuple(self.normalized.shape)} vs {tuple(self.pixel.shape)}"
            )

    @property
    def shape(self):
        return tuple(self.normalized.shape)

    @property
    def spatial(self):
        return tuple(self.normalized.shape[-2:])


def normalize_pixels(pixel: torch.Tensor, mean, std) -> torch.Tensor:
    """Map a [0, 1] pixel tensor into the model's normalized space."""
    m = torch.as_tensor(mean, dtype=pixel.dtype).view(-1, 1, 1)
    s = torch.as_tensor(std, dtype=pixel.dtype).view(-1, 1, 1)
    if m.shape[0] != pixel.shape[0]:
        raise InputError(
            f"{pixel.shape[0]}-channel image but {m.shape[0]} normalization constants"
        )
    return (pixel - m) / s


def denormalize(normalized: torch.Tensor, mean, std) -> torch.Tensor:
    """Inverse of :func:`normalize_pixels`."""
    m = torch.as_tensor(mean, dtype=normalized.dtype).view(-1, 1, 1)
    s = torch.as_tensor(std, dtype=normalized.dtype).view(-1, 1, 1)
    return normalized * s + m


def from_pixels(pixel, mean, std, dtype=torch.float32, source_path=None,
                source_size=None) -> ImageTensor:
    """Build an :class:`ImageTensor` from a [0, 1] pixel array or tensor.

    Accepts (C, H, W) tensors or (H, W, C) numpy arrays.
    """
    if isinstance(pixel, np.ndarray):
        if pixel.ndim == 3 and pixel.shape[-1] in (1, 3, 4):
            pixel = np.moveaxis(pixel, -1, 0)
        pixel = torch.from_numpy(np.ascontiguousarray(pixel))
    pixel = pixel.to(dtype)
    if pixel.ndim != 3:
        raise InputError(f"expected a (C, H, W) image, got shape {tuple(pixel.shape)}")
    return ImageTensor(
        normalized=normalize_pixels(pixel, mean, std),
        pixel=pixel,
        mean=tuple(float(v) for v in mean),
        std=tuple(float(v) for v in std),
        source_path=source_path,
        source_size=source_size,
    )
