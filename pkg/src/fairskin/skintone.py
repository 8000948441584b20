"""ITA estimation, Fitzpatrick classification and skin-tone transformation.

The tone transform works on the mean (L*, b*) of the non-lesion region: a
target ITA is drawn from the requested Fitzpatrick band, an initial point on
the target ITA line is picked, one gradient step trades the ITA mismatch off
against distance to the original colour, and the resulting offset is applied
to every skin pixel. The lesion boundary is then smoothed with a Gaussian
blur and lesion pixels are copied back verbatim.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .colorspace import LabImage, lab_to_srgb, srgb_to_lab, validate_rgb
from .errors import EmptySkinRegion

RAD2DEG = 180.0 / math.pi
# Floor applied to |b| when a refine step would push b* through zero.
B_FLOOR = 1e-6


class FstType(enum.IntEnum):
    I = 1
    II = 2
    III = 3
    IV = 4
    V = 5
    VI = 6

    @property
    def ita_range(self) -> tuple[float, float]:
        """Half-open ``(low, high]`` ITA interval in degrees."""
        return FST_RANGES[self]

    @classmethod
    def parse(cls, value) -> "FstType":
        if isinstance(value, FstType):
            return value
        if isinstance(value, str):
            key = value.strip().upper()
            if key.startswith("FST"):
                key = key[3:]
            if key in cls.__members__:
                return cls[key]
            return cls(int(key))
        return cls(int(value))


FST_RANGES = {
    FstType.I: (55.0, math.inf),
    FstType.II: (41.0, 55.0),
    FstType.III: (28.0, 41.0),
    FstType.IV: (10.0, 28.0),
    FstType.V: (-30.0, 10.0),
    FstType.VI: (-math.inf, -30.0),
}

# Finite bounds used when sampling the open-ended categories.
SAMPLING_RANGES = dict(FST_RANGES)
SAMPLING_RANGES[FstType.I] = (55.0, 75.0)
SAMPLING_RANGES[FstType.VI] = (-50.0, -30.0)


@dataclass
class ToneParams:
    lambda_L: float = 0.01
    lambda_b: float = 0.01
    eta: float = 0.1
    sigma: float = 2.0
    kernel_radius: int = 2
    edge_radius: int = 3
    target_fst: FstType = FstType.IV
    rng_seed: int = 0

    def __post_init__(self):
        self.target_fst = FstType.parse(self.target_fst)
        if self.lambda_L < 0 or self.lambda_b < 0:
            raise ValueError("lambda_L and lambda_b must be non-negative")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.kernel_radius < 1 or self.edge_radius < 1:
            raise ValueError("kernel_radius and edge_radius must be >= 1")


def _skin_pixels(plane: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return np.asarray(plane).ravel()
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != np.shape(plane):
        raise ValueError(f"mask shape {mask.shape} does not match image {np.shape(plane)}")
    return np.asarray(plane)[~mask]


def skin_means(img: LabImage, mask=None) -> tuple[float, float]:
    """Mean L* and b* over the non-lesion pixels."""
    L = _skin_pixels(img.L, mask)
    if L.size == 0:
        raise EmptySkinRegion("lesion mask covers the whole image")
    b = _skin_pixels(img.b, mask)
    return float(L.mean()), float(b.mean())


def ita_from_lb(L: float, b: float) -> float:
    """Individual Typology Angle in degrees for a single (L*, b*) pair."""
    return math.atan2(L - 50.0, b) * RAD2DEG


def compute_ita(img: LabImage, mask=None) -> float:
    """ITA of the skin region, from the mean L* and b* of non-lesion pixels."""
    return ita_from_lb(*skin_means(img, mask))


def classify_fst(ita: float) -> FstType:
    if not math.isfinite(ita):
        raise ValueError(f"ITA must be finite, got {ita}")
    if ita > 55:
        return FstType.I
    if ita > 41:
        return FstType.II
    if ita > 28:
        return FstType.III
    if ita > 10:
        return FstType.IV
    if ita > -30:
        return FstType.V
    return FstType.VI


def sample_target_ita(target, rng: np.random.Generator) -> float:
    """Uniform draw from the ``(low, high]`` ITA band of ``target``."""
    lo, hi = SAMPLING_RANGES[FstType.parse(target)]
    # hi - U[0, width) lands in (lo, hi]
    return float(hi - rng.uniform(0.0, hi - lo))


def init_lb(L0: float, b0: float, ita_target: float) -> tuple[float, float]:
    """Pick the starting (L, b) on the target ITA line closest to (L0, b0).

    Candidate A keeps b fixed and solves for L; candidate B keeps L fixed and
    solves for b. A wins ties. When the target angle is exactly zero the
    b-solving candidate is undefined and A is returned alone. B is also
    dropped when its b lands on the wrong side of zero (or on zero), since
    the point then sits on the opposite ray with ITA = target -/+ 180.
    """
    t = math.tan(math.radians(ita_target))
    cand_a = (b0 * t + 50.0, b0)
    if t == 0.0:
        return cand_a
    cand_b = (L0, (L0 - 50.0) / t)
    if not cand_b[1] * math.cos(math.radians(ita_target)) > 0.0:
        return cand_a
    dist_a = math.hypot(cand_a[0] - L0, cand_a[1] - b0)
    dist_b = math.hypot(cand_b[0] - L0, cand_b[1] - b0)
    return cand_a if dist_a <= dist_b else cand_b


def tone_loss(L, b, ita_target, lambda_L, lambda_b, L_orig, b_orig) -> float:
    """ITA mismatch squared plus quadratic pull towards the original colour."""
    mismatch = math.atan2(L - 50.0, b) * RAD2DEG - ita_target
    return mismatch**2 + lambda_L * (L - L_orig) ** 2 + lambda_b * (b - b_orig) ** 2


def tone_loss_grad(L, b, ita_target, lambda_L, lambda_b, L_orig, b_orig) -> tuple[float, float]:
    mismatch = math.atan2(L - 50.0, b) * RAD2DEG - ita_target
    r2 = (L - 50.0) ** 2 + b**2
    dtheta_dL = RAD2DEG * b / r2
    dtheta_db = -RAD2DEG * (L - 50.0) / r2
    gL = 2.0 * mismatch * dtheta_dL + 2.0 * lambda_L * (L - L_orig)
    gb = 2.0 * mismatch * dtheta_db + 2.0 * lambda_b * (b - b_orig)
    return gL, gb


def refine_lb(L, b, ita_target, params: ToneParams, L_orig, b_orig) -> tuple[float, float]:
    """Apply a single gradient step of the tone loss to (L, b)."""
    gL, gb = tone_loss_grad(L, b, ita_target, params.lambda_L, params.lambda_b, L_orig, b_orig)
    L_new = L - params.eta * gL
    b_new = b - params.eta * gb
    if b != 0 and (b_new == 0 or math.copysign(1.0, b_new) != math.copysign(1.0, b)):
        b_new = math.copysign(B_FLOOR, b)
    return L_new, b_new


def extract_edge_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Band around the lesion boundary: dilation minus erosion.

    Uses a square structuring element of side ``2 * radius + 1``. Pixels
    outside the image count as lesion for erosion and as skin for dilation,
    so a mask that fills the frame yields a band of width ``radius`` along the
    image border.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    mask = np.asarray(mask, dtype=bool)
    struct = np.ones((2 * radius + 1, 2 * radius + 1), dtype=bool)
    dilated = ndimage.binary_dilation(mask, structure=struct, border_value=0)
    eroded = ndimage.binary_erosion(mask, structure=struct, border_value=0)
    return dilated & ~eroded


def gaussian_kernel(sigma: float, radius: int, normalize: bool = True) -> np.ndarray:
    """Sampled 2-D Gaussian on a ``(2r+1, 2r+1)`` grid of integer offsets."""
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    xx, yy = np.meshgrid(offsets, offsets, indexing="ij")
    kernel = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)
    if normalize:
        kernel = kernel / kernel.sum()
    return kernel


def gaussian_blur(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Correlate ``plane`` with ``kernel`` using edge-replicate padding."""
    k = kernel.shape[0] // 2
    padded = np.pad(np.asarray(plane, dtype=np.float64), k, mode="edge")
    h, w = np.shape(plane)
    out = np.zeros((h, w))
    for u in range(-k, k + 1):
        for v in range(-k, k + 1):
            out += kernel[u + k, v + k] * padded[k + u : k + u + h, k + v : k + v + w]
    return out


def gaussian_blend(img: LabImage, edge: np.ndarray, params: ToneParams) -> LabImage:
    """Replace L* and b* by their Gaussian blur inside the edge band."""
    edge = np.asarray(edge, dtype=bool)
    if edge.shape != img.shape:
        raise ValueError("edge mask and image dimensions differ")
    if not edge.any():
        return img
    kernel = gaussian_kernel(params.sigma, params.kernel_radius)
    m = edge.astype(np.float64)
    L = m * gaussian_blur(img.L, kernel) + (1.0 - m) * img.L
    b = m * gaussian_blur(img.b, kernel) + (1.0 - m) * img.b
    return img.replace(L=L, b=b)


@dataclass
class ToneResult:
    image: np.ndarray
    achieved_ita: float
    original_ita: float
    target_ita: float
    offset: tuple[float, float]
    clamped_pixels: int
    loss_before: float = field(default=float("nan"))
    loss_after: float = field(default=float("nan"))


def transform_skin_tone(img: np.ndarray, mask, params: ToneParams, rng: np.random.Generator) -> ToneResult:
    """Shift the skin tone of ``img`` into ``params.target_fst``.

    Lesion pixels (``mask`` True) come back byte-identical.
    """
    img = validate_rgb(img)
    mask = np.zeros(img.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    lab = srgb_to_lab(img)
    L_bar, b_bar = skin_means(lab, mask)
    original_ita = ita_from_lb(L_bar, b_bar)
    target = sample_target_ita(params.target_fst, rng)

    L0, b0 = init_lb(L_bar, b_bar, target)
    args = (target, params.lambda_L, params.lambda_b, L_bar, b_bar)
    loss_before = tone_loss(L0, b0, *args)
    L1, b1 = refine_lb(L0, b0, target, params, L_bar, b_bar)
    loss_after = tone_loss(L1, b1, *args)
    dL, db = L1 - L_bar, b1 - b_bar

    skin = ~mask
    L = np.where(skin, lab.L + dL, lab.L)
    b = np.where(skin, lab.b + db, lab.b)
    shifted = lab.replace(L=L, b=b)
    blended = gaussian_blend(shifted, extract_edge_mask(mask, params.edge_radius), params)
    out, clamped = lab_to_srgb(blended, return_clamped=True)
    out[mask] = img[mask]

    achieved = compute_ita(srgb_to_lab(out), mask) if skin.any() else float("nan")
    return ToneResult(
        image=out,
        achieved_ita=achieved,
        original_ita=original_ita,
        target_ita=target,
        offset=(dL, db),
        clamped_pixels=clamped,
        loss_before=loss_before,
        loss_after=loss_after,
    )
