"""PNG / binary PPM reading and writing for RGB images and lesion masks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def read_rgb(path) -> np.ndarray:
    """Read an 8-bit RGB image (PNG or P6 PPM) as a ``(H, W, 3)`` uint8 array."""
    with Image.open(path) as im:
        if im.mode != "RGB":
            im = im.convert("RGB")
        return np.array(im, dtype=np.uint8)


def write_rgb(path, img: np.ndarray) -> Path:
    path = Path(path)
    img = np.ascontiguousarray(img, dtype=np.uint8)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(img, mode="RGB").save(path, format=fmt)
    return path


def read_mask(path) -> np.ndarray:
    """Read a grayscale lesion mask; pixels brighter than 127 are lesion."""
    with Image.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        return np.array(im, dtype=np.uint8) > 127


def write_mask(path, mask: np.ndarray) -> Path:
    path = Path(path)
    data = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pgm", ".pnm") else "PNG"
    Image.fromarray(data, mode="L").save(path, format=fmt)
    return path


def threshold_mask(img: np.ndarray, offset: float = 20.0) -> np.ndarray:
    """Fallback lesion mask: pixels clearly darker than the image median.

    Used only when no mask file is supplied. Luma below ``median - offset`` is
    treated as lesion.
    """
    luma = np.asarray(img, dtype=np.float64) @ np.array([0.299, 0.587, 0.114])
    return luma < np.median(luma) - offset
