"""Conversion between 8-bit sRGB images and CIELAB under the D65 white point.

RGB images are plain ``(height, width, 3)`` ``uint8`` arrays. Lab images are
:class:`LabImage` instances holding three float64 planes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Linear sRGB -> XYZ, four-decimal D65 matrix.
RGB_TO_XYZ = np.array(
    [
        [0.4124, 0.3576, 0.1805],
        [0.2126, 0.7152, 0.0722],
        [0.0193, 0.1192, 0.9505],
    ]
)
XYZ_TO_RGB = np.linalg.inv(RGB_TO_XYZ)

# D65 reference white on the 0-100 scale.
WHITE_D65 = np.array([95.047, 100.000, 108.883])

_F_THRESHOLD = 0.008856
_F_SLOPE = 7.787
_F_OFFSET = 16.0 / 116.0
# f() value at the branch point, used to pick the branch on the way back.
_F_KNEE = _F_THRESHOLD ** (1.0 / 3.0)


@dataclass(frozen=True)
class LabImage:
    """Per-pixel L*, a*, b* planes, each shaped ``(height, width)``."""

    L: np.ndarray
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        shapes = {np.shape(self.L), np.shape(self.a), np.shape(self.b)}
        if len(shapes) != 1 or len(np.shape(self.L)) != 2:
            raise ValueError(f"Lab planes must share one 2-D shape, got {shapes}")

    @property
    def height(self) -> int:
        return self.L.shape[0]

    @property
    def width(self) -> int:
        return self.L.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.L.shape

    def stack(self) -> np.ndarray:
        """Return the planes as one ``(height, width, 3)`` array."""
        return np.stack([self.L, self.a, self.b], axis=-1)

    @classmethod
    def from_array(cls, lab: np.ndarray) -> "LabImage":
        lab = np.asarray(lab, dtype=np.float64)
        return cls(lab[..., 0].copy(), lab[..., 1].copy(), lab[..., 2].copy())

    def replace(self, L=None, a=None, b=None) -> "LabImage":
        return LabImage(
            self.L if L is None else L,
            self.a if a is None else a,
            self.b if b is None else b,
        )


def validate_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (height, width, 3) RGB array, got shape {img.shape}")
    if img.dtype != np.uint8:
        if np.any(img < 0) or np.any(img > 255) or np.any(img != np.round(img)):
            raise ValueError("RGB values must be integers in [0, 255]")
        img = img.astype(np.uint8)
    return img


def srgb_to_linear(rgb: np.ndarray) -> np.ndarray:
    """Gamma-decode 8-bit sRGB values to linear light in [0, 1]."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    return np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(linear: np.ndarray) -> np.ndarray:
    """Inverse of :func:`srgb_to_linear`, returning unclamped values in 0-1 units."""
    c = np.asarray(linear, dtype=np.float64)
    # np.where evaluates both branches; keep the power off negative inputs.
    safe = np.maximum(c, 0.0)
    return np.where(c <= 0.04045 / 12.92, c * 12.92, 1.055 * safe ** (1.0 / 2.4) - 0.055)


def _apply_matrix(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """``v @ m.T`` written out per channel so every pixel is computed the same
    way whatever the image size (BLAS kernels may reorder the sums)."""
    c0, c1, c2 = v[..., 0], v[..., 1], v[..., 2]
    return np.stack([m[i, 0] * c0 + m[i, 1] * c1 + m[i, 2] * c2 for i in range(3)], axis=-1)


def _f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _F_THRESHOLD, np.cbrt(t), _F_SLOPE * t + _F_OFFSET)


def _f_inv(ft: np.ndarray) -> np.ndarray:
    return np.where(ft > _F_KNEE, ft**3, (ft - _F_OFFSET) / _F_SLOPE)


def srgb_to_lab(img: np.ndarray) -> LabImage:
    """Convert an 8-bit sRGB image to CIELAB (D65).

    The linear-RGB to XYZ product is scaled by 100 so that it lives on the
    same scale as the reference white; white then maps to L* = 100.
    """
    img = validate_rgb(img)
    xyz = _apply_matrix(RGB_TO_XYZ, srgb_to_linear(img)) * 100.0
    fx, fy, fz = np.moveaxis(_f(xyz / WHITE_D65), -1, 0)
    L = 116.0 * fy - 16.0
    a = 500.0 * (fx - fy)
    b = 200.0 * (fy - fz)
    return LabImage(L, a, b)


def lab_to_srgb(img: LabImage, return_clamped: bool = False):
    """Convert a :class:`LabImage` back to an 8-bit sRGB array.

    Values outside the sRGB gamut are clamped to [0, 1] before rounding half
    up to 8 bits. With ``return_clamped=True`` the number of pixels that needed
    clamping in any channel is returned alongside the image.
    """
    fy = (np.asarray(img.L, dtype=np.float64) + 16.0) / 116.0
    fx = fy + np.asarray(img.a, dtype=np.float64) / 500.0
    fz = fy - np.asarray(img.b, dtype=np.float64) / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * WHITE_D65 / 100.0
    rgb = linear_to_srgb(_apply_matrix(XYZ_TO_RGB, xyz))
    out_of_gamut = np.any((rgb < 0.0) | (rgb > 1.0), axis=-1)
    rgb = np.clip(rgb, 0.0, 1.0)
    out = np.floor(rgb * 255.0 + 0.5).astype(np.uint8)
    if return_clamped:
        return out, int(out_of_gamut.sum())
    return out


def lab_pixel(L: float, a: float, b: float, shape=(1, 1)) -> LabImage:
    """Build a constant Lab image, handy for probing single colours."""
    return LabImage(np.full(shape, float(L)), np.full(shape, float(a)), np.full(shape, float(b)))
