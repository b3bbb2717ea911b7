"""Raster I/O and preprocessing for tumor masks.

Images are held as 2-D ``numpy`` arrays indexed ``[row, col]``; the wrappers
below only add dimensions checks and provenance.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DecodeError

DEFAULT_THRESHOLD = 128
DEFAULT_SIZE = 256

# Rec. 601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class GrayImage:
    pixels: np.ndarray  # uint8, shape (height, width)
    source: Optional[Path] = None

    def __post_init__(self):
        if self.pixels.ndim != 2 or min(self.pixels.shape) < 1:
            raise ValueError(f"gray image needs positive 2-D shape, got {self.pixels.shape}")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class MaskImage:
    """Binary raster, 1 = tumor foreground."""

    pixels: np.ndarray  # uint8 in {0, 1}, shape (height, width)
    source: Optional[Path] = field(default=None, compare=False)

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2 or min(px.shape) < 1:
            raise ValueError(f"mask needs positive 2-D shape, got {px.shape}")
        if px.dtype != np.uint8:
            object.__setattr__(self, "pixels", px.astype(np.uint8))
        if self.pixels.size and self.pixels.max() > 1:
            raise ValueError("mask pixels must be 0 or 1")

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def count(self) -> int:
        return int(self.pixels.sum())

    @classmethod
    def zeros(cls, width: int, height: int) -> "MaskImage":
        return cls(np.zeros((height, width), dtype=np.uint8))

    def __eq__(self, other):
        if not isinstance(other, MaskImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    __hash__ = None


def to_luma(rgb: np.ndarray) -> np.ndarray:
    """Reduce an ``(H, W, 3)`` array to 8-bit luminance, rounding half up."""
    y = rgb[..., :3].astype(np.float64) @ _LUMA
    return np.clip(np.floor(y + 0.5), 0, 255).astype(np.uint8)


def decode_gray(path) -> GrayImage:
    """Load a PNG as 8-bit grayscale.

    Colour inputs are reduced with Rec. 601 weights. PNG stores channels as
    RGB, so no BGR swap is needed before the reduction. Alpha is discarded.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGBA" if "transparency" in im.info else "RGB")
                mode = im.mode
            arr = np.asarray(im)
    except (OSError, UnidentifiedImageError, ValueError) as exc:
        raise DecodeError(f"{path}: {exc}") from exc

    if mode == "1":
        gray = arr.astype(np.uint8) * 255
    elif mode == "L":
        gray = arr.astype(np.uint8)
    elif mode == "LA":
        gray = arr[..., 0].astype(np.uint8)
    elif mode in ("I;16", "I;16B", "I;16L", "I"):
        gray = (arr.astype(np.uint32) >> 8).clip(0, 255).astype(np.uint8)
    elif mode in ("RGB", "RGBA"):
        gray = to_luma(arr)
    else:
        raise DecodeError(f"{path}: unsupported PNG mode {mode!r}")
    if gray.ndim != 2 or min(gray.shape) < 1:
        raise DecodeError(f"{path}: empty raster")
    return GrayImage(np.ascontiguousarray(gray), source=path)


def binarize(img: GrayImage, threshold: int = DEFAULT_THRESHOLD) -> MaskImage:
    return MaskImage((img.pixels >= threshold).astype(np.uint8), source=img.source)


def resize_nearest(mask: MaskImage, width: int, height: int) -> MaskImage:
    """Nearest-neighbour resampling on pixel centres.

    Target pixel ``j`` samples source column ``floor((j + 0.5) * W / width)``.
    """
    if width <= 0 or height <= 0:
        raise ValueError("target dimensions must be positive")
    if (width, height) == (mask.width, mask.height):
        return mask
    cols = np.minimum(((np.arange(width) + 0.5) * mask.width / width).astype(int), mask.width - 1)
    rows = np.minimum(((np.arange(height) + 0.5) * mask.height / height).astype(int), mask.height - 1)
    return MaskImage(mask.pixels[np.ix_(rows, cols)], source=mask.source)


_STRUCTURE = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


def largest_component(mask: MaskImage, connectivity: int = 8) -> MaskImage:
    """Keep only the largest connected foreground component.

    Ties go to the component whose first pixel comes earliest in row-major
    order (``ndimage.label`` numbers components in that order).
    """
    if connectivity not in _STRUCTURE:
        raise ValueError("connectivity must be 4 or 8")
    labels, n = ndimage.label(mask.pixels, structure=_STRUCTURE[connectivity])
    if n <= 1:
        return mask
    sizes = np.bincount(labels.ravel())[1:]
    keep = int(np.argmax(sizes)) + 1
    return MaskImage((labels == keep).astype(np.uint8), source=mask.source)


def fill_holes(mask: MaskImage) -> MaskImage:
    return MaskImage(ndimage.binary_fill_holes(mask.pixels).astype(np.uint8), source=mask.source)


def load_mask(path, threshold: int = DEFAULT_THRESHOLD) -> MaskImage:
    return binarize(decode_gray(path), threshold)


def save_mask(mask: MaskImage, path) -> None:
    Image.fromarray((mask.pixels * 255).astype(np.uint8), mode="L").save(path)
