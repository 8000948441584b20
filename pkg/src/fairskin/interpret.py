"""Class activation maps, Grad-CAM, guided Grad-CAM and channel overlays.

All maps come from the last convolutional block of :class:`ToyModel`.
Because the model ends in global average pooling and an affine head, the
Grad-CAM channel weights are exactly the head weights divided by the
number of spatial positions, so Grad-CAM is the rectified CAM up to scale.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import BadClass
from .imgio import write_rgb
from .model import ToyModel

VIS_SIZE = 224
OVERLAY_ALPHA = 0.5


@dataclass
class Heatmap:
    values: np.ndarray
    normalized: bool = False

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def normalize(self) -> "Heatmap":
        return Heatmap(normalize_map(self.values), True)


def normalize_map(m: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi <= lo:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def _max_normalize(m: np.ndarray) -> np.ndarray:
    top = m.max()
    return m / top if top > 0 else np.zeros_like(m)


def _check_inputs(model: ToyModel, image, class_c: int) -> np.ndarray:
    if not 0 <= int(class_c) < model.config.n_classes:
        raise BadClass(f"class {class_c} outside 0..{model.config.n_classes - 1}")
    x = np.asarray(image, dtype=np.float64)
    return x[None] if x.ndim == 3 else x


def cam(model: ToyModel, image, class_c: int) -> Heatmap:
    """Head-weighted sum of the last-block feature maps for one image."""
    x = _check_inputs(model, image, class_c)
    _, _, fmap = model.forward(x[:1])
    w = model.params["head_w"][:, class_c]
    return Heatmap(np.tensordot(w, fmap[0], axes=(0, 0)))


def _class_gradient(model: ToyModel, x: np.ndarray, class_c: int, guided: bool = False):
    cache = model._forward(x[:1])
    onehot = np.zeros((1, model.config.n_classes))
    onehot[0, class_c] = 1.0
    _, d_last, d_input = model._backward(cache, dlogits=onehot, guided=guided, need_input=guided)
    return cache, d_last, d_input


def grad_cam(model: ToyModel, image, class_c: int) -> Heatmap:
    """Rectified sum of last-block maps weighted by their mean class-score gradient."""
    x = _check_inputs(model, image, class_c)
    cache, d_last, _ = _class_gradient(model, x, class_c)
    alpha = d_last[0].mean(axis=(0, 1))  # (C,)
    acts = cache.acts[-1][0]  # (H, W, C)
    return Heatmap(np.maximum(acts @ alpha, 0.0))


def guided_saliency(model: ToyModel, image, class_c: int) -> np.ndarray:
    """Guided-backpropagation input gradient, reduced to one map by channel-wise max of |g|."""
    x = _check_inputs(model, image, class_c)
    _, _, d_input = _class_gradient(model, x, class_c, guided=True)
    return np.abs(d_input[0]).max(axis=2)


def guided_grad_cam(model: ToyModel, image, class_c: int) -> Heatmap:
    """Product of the upsampled Grad-CAM map and the guided saliency, both max-normalized."""
    x = _check_inputs(model, image, class_c)
    h, w = model.config.input_size[:2]
    gc = resize_bilinear(_max_normalize(grad_cam(model, x, class_c).values), (h, w))
    sal = _max_normalize(guided_saliency(model, x, class_c))
    return Heatmap(gc * sal, True)


def resize_bilinear(img: np.ndarray, size: tuple) -> np.ndarray:
    """Bilinear resize with pixel-centre alignment and edge clamping.

    Works on ``(H, W)`` or ``(H, W, C)`` float arrays; ``size`` is ``(out_h, out_w)``.
    """
    img = np.asarray(img, dtype=np.float64)
    out_h, out_w = size

    def axis(n_in, n_out):
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, src - i0

    y0, y1, fy = axis(img.shape[0], out_h)
    x0, x1, fx = axis(img.shape[1], out_w)
    if img.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def colormap(v: np.ndarray) -> np.ndarray:
    """Blue (0,0,255) at 0, gray (128,128,128) at 0.5, red (255,0,0) at 1, linear in between.

    Returns float RGB in [0, 255].
    """
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, 1.0)
    lo = np.clip(2.0 * v, 0.0, 1.0)
    hi = np.clip(2.0 * v - 1.0, 0.0, 1.0)
    low_half = v <= 0.5
    r = np.where(low_half, 128.0 * lo, 128.0 + 127.0 * hi)
    g = np.where(low_half, 128.0 * lo, 128.0 - 128.0 * hi)
    b = np.where(low_half, 255.0 - 127.0 * lo, 128.0 - 128.0 * hi)
    return np.stack([r, g, b], axis=-1)


def overlay(rgb: np.ndarray, fmap: np.ndarray, size: int = VIS_SIZE, alpha: float = OVERLAY_ALPHA) -> np.ndarray:
    """Colour-mapped, resized feature map blended over the resized RGB image (uint8)."""
    heat = colormap(resize_bilinear(normalize_map(fmap), (size, size)))
    base = resize_bilinear(np.asarray(rgb, dtype=np.float64), (size, size))
    out = alpha * heat + (1.0 - alpha) * base
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def visualize_channels(
    model: ToyModel,
    images: np.ndarray,
    channel_set: Sequence[int],
    out_dir,
    image_ids: Optional[Sequence[str]] = None,
    gammas: Optional[Sequence[float]] = None,
    rgb: Optional[np.ndarray] = None,
):
    """Write ``img_{i}_ch_{c}.png`` overlays for each image and channel.

    ``images`` are model inputs (floats in [0, 1]); ``rgb`` optionally gives
    the uint8 pictures to draw on (defaults to ``images * 255``). A file that
    cannot be written is recorded in the index and skipped. Returns
    ``(written_paths, index_path)``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    channels = [int(c) for c in channel_set]
    live = model.config.feature_dim
    bad = [c for c in channels if not 0 <= c < live]
    if bad:
        raise IndexError(f"channels {bad} not in 0..{live - 1}")
    images = np.asarray(images, dtype=np.float64)
    if rgb is None:
        rgb = np.clip(np.floor(images * 255.0 + 0.5), 0, 255)
    _, _, fmaps = model.forward(images)
    written, entries = [], []
    for i in range(images.shape[0]):
        for c in channels:
            path = out_dir / f"img_{i}_ch_{c}.png"
            entry = {
                "image": image_ids[i] if image_ids is not None else i,
                "channel": c,
                "path": path.name,
                "gamma": None if gammas is None else float(gammas[c]),
            }
            try:
                write_rgb(path, overlay(rgb[i], fmaps[i, c]))
                written.append(path)
            except OSError as exc:
                entry["path"] = None
                entry["error"] = str(exc)
            entries.append(entry)
    index = out_dir / "channels_index.json"
    index.write_text(json.dumps(entries, indent=2) + "\n")
    return written, index
