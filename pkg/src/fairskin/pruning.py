"""Channel scoring with the soft nearest neighbour loss and iterative pruning.

Channels of the last convolutional block are scored per sensitive
attribute: the pooled activation of one channel is treated as a scalar
feature per sample, and a low SNNL means the channel separates the
attribute's groups. The lowest-scoring channels are removed, the model is
fine-tuned with cross-entropy, and the step is undone when accuracy drops
too far or fairness stops improving.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import DegenerateBatch, EmptyModel
from .metrics import eodds_difference, predictions_from_model
from .model import Batch, ToyModel, accuracy, sgd_train
from .snnl import SnnlParams, snnl, snnl_per_channel

__all__ = [
    "ChannelScore",
    "PruneConfig",
    "SnnlParams",
    "channel_gammas",
    "iterative_prune",
    "prune_channels",
    "score_channels",
    "select_prune_set",
    "snnl",
]


@dataclass(frozen=True)
class ChannelScore:
    channel_index: int
    score_gamma: float
    attribute: object = 0


@dataclass
class PruneConfig:
    prune_ratio: float = 0.02
    max_iterations: int = 3
    acc_threshold: float = 0.03
    fair_threshold: float = 0.005
    finetune_epochs: int = 3
    finetune_lr: float = 0.02
    finetune_batch_size: int = 32
    positive_class: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.prune_ratio < 1.0:
            raise ValueError("prune_ratio must lie in (0, 1)")
        if self.acc_threshold < 0 or self.fair_threshold < 0:
            raise ValueError("thresholds must be non-negative")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


def channel_gammas(model: ToyModel, data: Batch, attribute: int, params: SnnlParams | None = None) -> np.ndarray:
    """Per-channel SNNL of the pooled last-block features, averaged over batches.

    ``data`` is walked in order in chunks of ``params.batch_b``; samples with an
    unknown group are dropped and chunks left with fewer than two samples are
    skipped.
    """
    params = params or SnnlParams()
    total = np.zeros(model.config.feature_dim)
    n_batches = 0
    for chunk in data.batches(params.batch_b):
        known = chunk.attrs[:, attribute] >= 0
        if known.sum() < 2:
            continue
        _, feats, _ = model.forward(chunk.images[known])
        total += snnl_per_channel(feats, chunk.attrs[known, attribute], params.temperature_T)
        n_batches += 1
    if n_batches == 0:
        raise DegenerateBatch("no batch with at least two labelled samples")
    return total / n_batches


def score_channels(model: ToyModel, data: Batch, attribute: int, params: SnnlParams | None = None) -> list[ChannelScore]:
    gammas = channel_gammas(model, data, attribute, params)
    name = data.attr_names[attribute] if attribute < len(data.attr_names) else attribute
    return [ChannelScore(int(k), float(g), name) for k, g in enumerate(gammas)]


def select_prune_set(gammas, ratio: float) -> list[int]:
    """The ``ceil(ratio * C)`` lowest-gamma channels; ties go to the lower index."""
    gammas = np.asarray(gammas, dtype=np.float64)
    n = int(math.ceil(ratio * gammas.size - 1e-12))
    order = np.lexsort((np.arange(gammas.size), gammas))
    return sorted(int(k) for k in order[:n])


def prune_channels(model: ToyModel, channels) -> ToyModel:
    """Remove last-block channels and the matching head rows.

    Surviving parameters are copied unchanged.
    """
    channels = sorted({int(c) for c in channels})
    c_last = model.config.feature_dim
    if any(c < 0 or c >= c_last for c in channels):
        raise IndexError(f"channel index out of range 0..{c_last - 1}: {channels}")
    if len(channels) >= c_last:
        raise EmptyModel("pruning would remove every channel of the last block")
    new = model.copy()
    if not channels:
        return new
    keep = np.setdiff1d(np.arange(c_last), channels)
    last = model.n_blocks - 1
    new.params[f"conv{last}_w"] = model.params[f"conv{last}_w"][keep].copy()
    new.params[f"conv{last}_b"] = model.params[f"conv{last}_b"][keep].copy()
    new.params["head_w"] = model.params["head_w"][keep].copy()
    new.config.conv_channels = model.config.conv_channels[:-1] + (int(keep.size),)
    new._check()
    return new


def fairness_score(model: ToyModel, data: Batch, attribute: int, positive_class: int = 0) -> float:
    """1 - equalized-odds difference on ``attribute``; higher is fairer."""
    preds = predictions_from_model(model, data)
    return 1.0 - eodds_difference(preds, attribute, positive_class)


@dataclass
class PruneStep:
    iteration: int
    gammas: list
    pruned: list  # indices into the model being pruned at this step
    pruned_original: list  # the same channels as indices of the unpruned model
    accuracy: float
    fairness: float
    reverted: bool

    def to_dict(self) -> dict:
        return {
            "iteration": self.iteration,
            "gammas": [float(g) for g in self.gammas],
            "pruned": list(self.pruned),
            "pruned_original": list(self.pruned_original),
            "accuracy": self.accuracy,
            "fairness": self.fairness,
            "reverted": self.reverted,
        }


@dataclass
class PruneHistory:
    baseline_accuracy: float = float("nan")
    baseline_fairness: float = float("nan")
    steps: list = field(default_factory=list)
    surviving: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.steps)

    def to_dict(self) -> dict:
        return {
            "baseline_accuracy": self.baseline_accuracy,
            "baseline_fairness": self.baseline_fairness,
            "steps": [s.to_dict() for s in self.steps],
            "surviving_channels": list(self.surviving),
        }


def iterative_prune(
    model: ToyModel,
    train_data: Batch,
    val_data: Batch,
    attribute: int,
    cfg: PruneConfig | None = None,
    snnl_params: SnnlParams | None = None,
    scorer: Optional[Callable[[ToyModel], np.ndarray]] = None,
):
    """Score, prune, fine-tune, check; repeat up to ``cfg.max_iterations`` times.

    ``scorer`` replaces the single-attribute SNNL score with any per-channel
    score vector (lower is pruned first). Fairness is measured on
    ``attribute`` of ``val_data``. Returns ``(model, history)``; when a step is
    rejected the model from before that step is returned.
    """
    cfg = cfg or PruneConfig()
    snnl_params = snnl_params or SnnlParams()
    history = PruneHistory()
    surviving = list(range(model.config.feature_dim))
    history.surviving = list(surviving)
    if cfg.max_iterations == 0:
        return model, history

    rng = np.random.default_rng(cfg.seed)
    score = scorer or (lambda m: channel_gammas(m, train_data, attribute, snnl_params))
    acc0 = accuracy(model, val_data)
    fair_prev = fairness_score(model, val_data, attribute, cfg.positive_class)
    history.baseline_accuracy = acc0
    history.baseline_fairness = fair_prev
    current = model
    for k in range(1, cfg.max_iterations + 1):
        gammas = np.asarray(score(current))
        chosen = select_prune_set(gammas, cfg.prune_ratio)
        if len(chosen) >= current.config.feature_dim:
            break
        candidate = prune_channels(current, chosen)
        candidate = sgd_train(
            candidate, train_data, cfg.finetune_epochs, cfg.finetune_lr, rng, cfg.finetune_batch_size
        )
        acc_k = accuracy(candidate, val_data)
        fair_k = fairness_score(candidate, val_data, attribute, cfg.positive_class)
        reject = (acc0 - acc_k > cfg.acc_threshold) or (fair_k - fair_prev < cfg.fair_threshold)
        history.steps.append(
            PruneStep(k, gammas.tolist(), chosen, [surviving[c] for c in chosen], acc_k, fair_k, reject)
        )
        if reject:
            break
        surviving = [c for i, c in enumerate(surviving) if i not in set(chosen)]
        history.surviving = list(surviving)
        current = candidate
        fair_prev = fair_k
    return current, history
