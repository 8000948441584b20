"""Small convolutional classifier with hand-written forward and backward passes.

Architecture: a stack of 3x3 / stride 1 / pad 1 convolutions with ReLU, a 2x2
max-pool after every block except the last, global average pooling of the
last block, and an affine head. All parameters are float64. Tensors are kept
channels-last (``B, H, W, C``) internally.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import BadConfig, ShapeMismatch
from .snnl import SnnlParams, snnl_and_grad

CHECKPOINT_FORMAT = "fairskin-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    input_size: tuple = (32, 32, 3)
    conv_channels: tuple = (8, 16, 32)
    n_classes: int = 4
    seed: int = 0

    def __post_init__(self):
        self.input_size = tuple(int(v) for v in self.input_size)
        self.conv_channels = tuple(int(v) for v in self.conv_channels)
        self.validate()

    def validate(self):
        if len(self.input_size) != 3 or min(self.input_size) < 1:
            raise BadConfig(f"input_size must be (H, W, C) with positive entries, got {self.input_size}")
        if not self.conv_channels or min(self.conv_channels) < 1:
            raise BadConfig(f"conv_channels must be non-empty and positive, got {self.conv_channels}")
        if self.n_classes < 2:
            raise BadConfig("n_classes must be at least 2")
        n_pool = len(self.conv_channels) - 1
        h, w, _ = self.input_size
        if h % (2**n_pool) or w % (2**n_pool):
            raise BadConfig(f"input {h}x{w} not divisible by 2^{n_pool} for the pooling stages")

    @property
    def feature_dim(self) -> int:
        return self.conv_channels[-1]

    @property
    def feature_map_size(self) -> tuple[int, int]:
        scale = 2 ** (len(self.conv_channels) - 1)
        return self.input_size[0] // scale, self.input_size[1] // scale

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "conv_channels": list(self.conv_channels),
            "n_classes": self.n_classes,
            "seed": self.seed,
        }


@dataclass
class Batch:
    """Images in [0, 1] shaped ``(B, H, W, 3)``, class labels and group labels.

    ``attrs`` is ``(B, K)``; a negative entry marks an unknown group.
    """

    images: np.ndarray
    labels: np.ndarray
    attrs: np.ndarray = None
    attr_names: tuple = ()

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.attrs is None:
            self.attrs = np.zeros((len(self.labels), 0), dtype=np.int64)
        self.attrs = np.asarray(self.attrs, dtype=np.int64)
        if self.attrs.ndim == 1:
            self.attrs = self.attrs[:, None]
        n = self.images.shape[0]
        if self.labels.shape != (n,) or self.attrs.shape[0] != n:
            raise ShapeMismatch(
                f"batch leading dimensions differ: images {n}, labels {self.labels.shape}, attrs {self.attrs.shape}"
            )
        self.attr_names = tuple(self.attr_names)

    def __len__(self) -> int:
        return self.images.shape[0]

    def subset(self, idx) -> "Batch":
        idx = np.asarray(idx)
        return Batch(self.images[idx], self.labels[idx], self.attrs[idx], self.attr_names)

    def with_images(self, images) -> "Batch":
        return Batch(images, self.labels, self.attrs, self.attr_names)

    def batches(self, size: int, order=None):
        order = np.arange(len(self)) if order is None else np.asarray(order)
        for start in range(0, len(order), size):
            yield self.subset(order[start : start + size])


@dataclass
class ForwardCache:
    inputs: list
    cols: list
    pre_acts: list
    acts: list
    pooled_from: list
    features: np.ndarray
    logits: np.ndarray


class ToyModel:
    """Parameters plus config. ``params`` maps names to float64 arrays.

    Conv kernels are ``(C_out, C_in, 3, 3)``; the head weight is
    ``(C_last, n_classes)``.
    """

    def __init__(self, config: ModelConfig, params: dict):
        self.config = config
        self.params = params
        self.trace: list = []
        self._check()

    @property
    def n_blocks(self) -> int:
        return len(self.config.conv_channels)

    def _check(self):
        cin = self.config.input_size[2]
        for i, cout in enumerate(self.config.conv_channels):
            if self.params[f"conv{i}_w"].shape != (cout, cin, 3, 3):
                raise BadConfig(f"conv{i}_w has shape {self.params[f'conv{i}_w'].shape}, expected {(cout, cin, 3, 3)}")
            if self.params[f"conv{i}_b"].shape != (cout,):
                raise BadConfig(f"conv{i}_b has wrong shape")
            cin = cout
        if self.params["head_w"].shape != (cin, self.config.n_classes):
            raise BadConfig(f"head_w has shape {self.params['head_w'].shape}, expected {(cin, self.config.n_classes)}")
        if self.params["head_b"].shape != (self.config.n_classes,):
            raise BadConfig("head_b has wrong shape")

    def copy(self) -> "ToyModel":
        m = ToyModel(copy.deepcopy(self.config), {k: v.copy() for k, v in self.params.items()})
        m.trace = list(self.trace)
        return m

    def param_names(self) -> list[str]:
        return list(self.params)

    def n_params(self) -> int:
        return int(sum(v.size for v in self.params.values()))

    def same_params(self, other: "ToyModel") -> bool:
        """Bit-exact parameter equality."""
        if list(self.params) != list(other.params):
            return False
        return all(
            self.params[k].shape == other.params[k].shape and np.array_equal(self.params[k], other.params[k])
            for k in self.params
        )

    def forward(self, images):
        """Return ``(logits, features, feature_maps)``.

        ``feature_maps`` is channels-first ``(B, C_last, H, W)``; ``features`` is
        its spatial mean.
        """
        cache = self._forward(images)
        fmap = np.ascontiguousarray(cache.acts[-1].transpose(0, 3, 1, 2))
        return cache.logits, cache.features, fmap

    def predict_proba(self, images, batch_size: int = 256) -> np.ndarray:
        out = []
        images = np.asarray(images)
        for start in range(0, images.shape[0], batch_size):
            logits = self._forward(images[start : start + batch_size]).logits
            out.append(softmax(logits))
        if not out:
            return np.zeros((0, self.config.n_classes))
        return np.concatenate(out)

    def _forward(self, images) -> ForwardCache:
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[None]
        if x.ndim != 4 or tuple(x.shape[1:]) != self.config.input_size:
            raise ShapeMismatch(f"expected images shaped (B, {self.config.input_size}), got {x.shape}")
        inputs, cols, pre_acts, acts, pooled_from = [], [], [], [], []
        for i in range(self.n_blocks):
            inputs.append(x)
            col = _im2col(x)
            cols.append(col)
            z = conv3x3(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"], cols=col)
            a = np.maximum(z, 0.0)
            pre_acts.append(z)
            acts.append(a)
            if i < self.n_blocks - 1:
                pooled_from.append(a)
                x = maxpool2(a)
        features = acts[-1].mean(axis=(1, 2))
        logits = features @ self.params["head_w"] + self.params["head_b"]
        return ForwardCache(inputs, cols, pre_acts, acts, pooled_from, features, logits)

    def _backward(self, cache: ForwardCache, dlogits=None, dfeatures=None, guided: bool = False, need_input: bool = False):
        """Backpropagate from logits and/or pooled features.

        Returns ``(grads, d_last_act, d_input)`` where ``d_last_act`` is the
        gradient with respect to the last block's post-ReLU activations.
        With ``guided=True`` every ReLU also blocks negative incoming gradient.
        """
        B = cache.features.shape[0]
        grads = {}
        dfeat = np.zeros_like(cache.features)
        if dlogits is not None:
            grads["head_w"] = cache.features.T @ dlogits
            grads["head_b"] = dlogits.sum(axis=0)
            dfeat = dfeat + dlogits @ self.params["head_w"].T
        else:
            grads["head_w"] = np.zeros_like(self.params["head_w"])
            grads["head_b"] = np.zeros_like(self.params["head_b"])
        if dfeatures is not None:
            dfeat = dfeat + dfeatures
        h, w = cache.acts[-1].shape[1:3]
        da = np.broadcast_to(dfeat[:, None, None, :] / (h * w), (B, h, w, dfeat.shape[1])).copy()
        d_last = da.copy()
        dx = None
        for i in reversed(range(self.n_blocks)):
            if i < self.n_blocks - 1:
                da = maxpool2_backward(dx, cache.pooled_from[i])
            dz = da * (cache.pre_acts[i] > 0)
            if guided:
                dz = dz * (da > 0)
            gw, gb, dx = conv3x3_backward(
                dz, cache.inputs[i], self.params[f"conv{i}_w"], need_input=(i > 0 or need_input), cols=cache.cols[i]
            )
            grads[f"conv{i}_w"] = gw
            grads[f"conv{i}_b"] = gb
        ordered = {k: grads[k] for k in self.params}
        return ordered, d_last, dx


def build_model(cfg: ModelConfig) -> ToyModel:
    """Initialise parameters from ``cfg.seed``.

    Conv kernels are drawn from U(-sqrt(6/fan_in), sqrt(6/fan_in)), the head
    from U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases start at zero.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    params = {}
    cin = cfg.input_size[2]
    for i, cout in enumerate(cfg.conv_channels):
        bound = np.sqrt(6.0 / (cin * 9))
        params[f"conv{i}_w"] = rng.uniform(-bound, bound, size=(cout, cin, 3, 3))
        params[f"conv{i}_b"] = np.zeros(cout)
        cin = cout
    bound = 1.0 / np.sqrt(cin)
    params["head_w"] = rng.uniform(-bound, bound, size=(cin, cfg.n_classes))
    params["head_b"] = np.zeros(cfg.n_classes)
    return ToyModel(cfg, params)


def conv3x3(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, cols=None) -> np.ndarray:
    """Same-padded 3x3 convolution (cross-correlation), channels-last."""
    B, H, W, C = x.shape
    if cols is None:
        cols = _im2col(x)
    out = cols @ weight.reshape(weight.shape[0], -1).T + bias
    return out.reshape(B, H, W, weight.shape[0])


def _im2col(x: np.ndarray) -> np.ndarray:
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (B, H, W, C, 3, 3)
    return win.reshape(B * H * W, C * 9)


def conv3x3_backward(dout, x, weight, need_input=True, cols=None):
    B, H, W, C = x.shape
    O = weight.shape[0]
    dflat = dout.reshape(B * H * W, O)
    if cols is None:
        cols = _im2col(x)
    gw = (dflat.T @ cols).reshape(weight.shape)
    gb = dflat.sum(axis=0)
    if not need_input:
        return gw, gb, None
    dcols = (dflat @ weight.reshape(O, -1)).reshape(B, H, W, C, 3, 3)
    dxp = np.zeros((B, H + 2, W + 2, C))
    for u in range(3):
        for v in range(3):
            dxp[:, u : u + H, v : v + W, :] += dcols[..., u, v]
    return gw, gb, dxp[:, 1:-1, 1:-1, :]


def maxpool2(a: np.ndarray) -> np.ndarray:
    B, H, W, C = a.shape
    return a.reshape(B, H // 2, 2, W // 2, 2, C).max(axis=(2, 4))


def maxpool2_backward(dout: np.ndarray, a: np.ndarray) -> np.ndarray:
    """Route each pooled gradient to the first maximum of its 2x2 window."""
    B, H, W, C = a.shape
    win = a.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, H // 2, W // 2, C, 4)
    idx = win.argmax(axis=-1)
    dwin = np.zeros_like(win)
    np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
    return dwin.reshape(B, H // 2, W // 2, C, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(B, H, W, C)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels) -> float:
    """Mean negative log-likelihood of ``labels`` under ``softmax(logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-log_probs[np.arange(len(labels)), labels].mean()) + 0.0


def per_sample_cross_entropy(logits, labels) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return -log_probs[np.arange(len(labels)), labels]


def weighted_snnl_and_grad(features, attrs, weights, temperature):
    """Sum over attributes of ``w_k * SNNL(features, attrs[:, k])`` and its feature gradient.

    Rows with a negative (unknown) group id are left out of that attribute's term.
    """
    weights = np.asarray(weights, dtype=np.float64)
    attrs = np.asarray(attrs)
    if attrs.ndim == 1:
        attrs = attrs[:, None]
    if weights.shape != (attrs.shape[1],):
        raise ShapeMismatch(f"{weights.shape[0]} weights for {attrs.shape[1]} attributes")
    total = 0.0
    grad = np.zeros_like(features)
    for k, wk in enumerate(weights):
        if wk == 0.0:
            continue
        known = attrs[:, k] >= 0
        if known.sum() < 2:
            continue
        loss_k, g_k = snnl_and_grad(features[known], attrs[known, k], temperature)
        total += wk * loss_k
        grad[known] += wk * g_k
    return total, grad


def loss_and_grads(model: ToyModel, batch: Batch, loss_kind: str = "ce", fair_weights=None, snnl_params=None):
    """Loss value and exact gradients for every parameter.

    ``loss_kind`` is ``"ce"`` (mean cross-entropy) or ``"snnl"`` (weighted
    soft nearest neighbour loss of the pooled features over ``batch.attrs``).
    """
    cache = model._forward(batch.images)
    if loss_kind == "ce":
        loss = cross_entropy(cache.logits, batch.labels)
        p = softmax(cache.logits)
        p[np.arange(len(batch)), batch.labels] -= 1.0
        grads, _, _ = model._backward(cache, dlogits=p / len(batch))
    elif loss_kind == "snnl":
        params = snnl_params or SnnlParams()
        w = np.ones(batch.attrs.shape[1]) if fair_weights is None else fair_weights
        loss, dfeat = weighted_snnl_and_grad(cache.features, batch.attrs, w, params.temperature_T)
        grads, _, _ = model._backward(cache, dfeatures=dfeat)
    else:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    return loss, grads


def backward(model: ToyModel, batch: Batch, loss_kind: str = "ce", **kwargs) -> dict:
    return loss_and_grads(model, batch, loss_kind, **kwargs)[1]


def apply_gradients(model: ToyModel, grads: dict, lr: float) -> ToyModel:
    """Return a new model with ``params - lr * grads``; ``model`` is not touched."""
    new = model.copy()
    for k, g in grads.items():
        new.params[k] = model.params[k] - lr * g
    return new


def sgd_epoch(model: ToyModel, data: Batch, lr: float, rng, batch_size: int = 32, images=None) -> float:
    """One shuffled pass of plain SGD on cross-entropy, updating ``model`` in place.

    ``images`` optionally overrides ``data.images`` for this epoch (used when
    blending in synthetic counterparts). Returns the mean batch loss.
    """
    order = rng.permutation(len(data))
    imgs = data.images if images is None else images
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start : start + batch_size]
        b = Batch(imgs[idx], data.labels[idx], data.attrs[idx])
        loss, grads = loss_and_grads(model, b, "ce")
        if lr != 0.0:
            for k, g in grads.items():
                model.params[k] -= lr * g
        losses.append(loss)
    return float(np.mean(losses)) if losses else float("nan")


def sgd_train(model: ToyModel, dataset: Batch, epochs: int, lr: float, rng, batch_size: int = 32) -> ToyModel:
    """Plain SGD with seeded shuffling. Returns a trained copy; per-epoch losses go to ``.trace``."""
    if len(dataset) == 0:
        raise ValueError("cannot train on an empty dataset")
    trained = model.copy()
    for _ in range(epochs):
        trained.trace.append(sgd_epoch(trained, dataset, lr, rng, batch_size))
    return trained


def predict(model: ToyModel, images, batch_size: int = 256) -> np.ndarray:
    return model.predict_proba(images, batch_size).argmax(axis=1)


def accuracy(model: ToyModel, data: Batch) -> float:
    if len(data) == 0:
        return float("nan")
    return float(np.mean(predict(model, data.images) == data.labels))


def kfold_indices(n: int, k: int, rng) -> list[tuple[np.ndarray, np.ndarray]]:
    """Random split of ``range(n)`` into ``k`` near-equal folds as (train, val) pairs."""
    if k < 2 or k > n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    folds = np.array_split(rng.permutation(n), k)
    return [(np.sort(np.concatenate(folds[:i] + folds[i + 1 :])), np.sort(folds[i])) for i in range(k)]


def save_checkpoint(model: ToyModel, path) -> Path:
    """JSON checkpoint: config plus each parameter as shape and flat row-major values."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "params": {k: {"shape": list(v.shape), "data": [float(x) for x in v.ravel()]} for k, v in model.params.items()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc))
    return path


def load_checkpoint(path) -> ToyModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise BadConfig(f"{path}: not a version-{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} file")
    cfg = ModelConfig(**doc["config"])
    params = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in doc["params"].items()}
    return ToyModel(cfg, params)


def activation_pattern(model: ToyModel, images) -> list[np.ndarray]:
    """ReLU on/off states and max-pool winners for ``images``.

    Two parameter settings with equal patterns lie in the same linear region of
    the network, so the loss is smooth between them. Gradient checks use this
    to skip finite-difference probes that straddle a kink.
    """
    cache = model._forward(images)
    pattern = [z > 0 for z in cache.pre_acts]
    for a in cache.pooled_from:
        B, H, W, C = a.shape
        win = a.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 5, 2, 4).reshape(B, H // 2, W // 2, C, 4)
        pattern.append(win.argmax(axis=-1))
    return pattern


def same_pattern(p: list, q: list) -> bool:
    return len(p) == len(q) and all(np.array_equal(a, b) for a, b in zip(p, q))
