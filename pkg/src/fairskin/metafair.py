"""Meta-learned attribute weights for joint fairness-aware pruning.

A set of non-negative weights ``w`` mixes per-attribute soft nearest
neighbour losses. Each meta-iteration simulates one gradient step on the
weighted loss and scores the stepped model by the spread of per-group
cross-entropy on a held-out meta set; ``w`` follows the central
finite-difference gradient of that score. The final weights mix the
per-attribute channel scores used for pruning.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import EmptyGroup
from .model import Batch, ToyModel, apply_gradients, loss_and_grads, per_sample_cross_entropy
from .pruning import PruneConfig, channel_gammas, iterative_prune
from .snnl import SnnlParams


@dataclass
class FairWeights:
    w: np.ndarray

    def __post_init__(self):
        self.w = np.asarray(self.w, dtype=np.float64).ravel()
        if np.any(self.w < 0) or not np.all(np.isfinite(self.w)):
            raise ValueError("fairness weights must be finite and non-negative")

    @classmethod
    def ones(cls, k: int = 3) -> "FairWeights":
        return cls(np.ones(k))

    def __len__(self) -> int:
        return self.w.size

    def tolist(self) -> list:
        return [float(v) for v in self.w]


@dataclass
class MetaConfig:
    alpha: float = 0.05
    eta: float = 0.1
    meta_iterations_T: int = 20
    meta_split: float = 0.10
    fd_step: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.eta <= 0 or self.fd_step <= 0:
            raise ValueError("alpha must be >= 0; eta and fd_step must be positive")
        if self.meta_iterations_T < 0:
            raise ValueError("meta_iterations_T must be >= 0")
        if not 0.0 < self.meta_split < 1.0:
            raise ValueError("meta_split must lie in (0, 1)")


def _weights(w) -> np.ndarray:
    return w.w if isinstance(w, FairWeights) else np.asarray(w, dtype=np.float64)


def weighted_snnl_loss(model: ToyModel, batch: Batch, w, params: SnnlParams | None = None) -> float:
    """Sum of ``w_i * SNNL(pooled features, attribute i)`` over the batch."""
    loss, _ = loss_and_grads(model, batch, "snnl", fair_weights=_weights(w), snnl_params=params)
    return float(loss)


def attribute_gradients(model: ToyModel, batch: Batch, params: SnnlParams | None = None) -> list[dict]:
    """Parameter gradient of the single-attribute SNNL for each attribute.

    The weighted loss is linear in ``w``, so its gradient is the matching mix
    of these.
    """
    k = batch.attrs.shape[1]
    out = []
    for i in range(k):
        onehot = np.zeros(k)
        onehot[i] = 1.0
        _, g = loss_and_grads(model, batch, "snnl", fair_weights=onehot, snnl_params=params)
        out.append(g)
    return out


def mix_gradients(per_attr: Sequence[dict], w) -> dict:
    w = _weights(w)
    return {name: sum(wi * g[name] for wi, g in zip(w, per_attr)) for name in per_attr[0]}


def simulate_update(model: ToyModel, grads: dict, alpha: float) -> ToyModel:
    """Detached copy of ``model`` after one step ``theta - alpha * grad``."""
    if alpha == 0.0:
        return model.copy()
    return apply_gradients(model, grads, alpha)


def group_losses(per_sample: np.ndarray, groups: np.ndarray, expected: Optional[Sequence[int]] = None) -> np.ndarray:
    """Mean loss per group id (unknown ``-1`` rows ignored), ordered by id."""
    groups = np.asarray(groups)
    present = sorted(int(g) for g in np.unique(groups) if g >= 0)
    if expected is not None:
        missing = sorted(set(int(g) for g in expected) - set(present))
        if missing:
            raise EmptyGroup(missing)
        present = sorted(int(g) for g in expected)
    return np.array([per_sample[groups == g].mean() for g in present])


def variance_of_losses(losses) -> float:
    losses = np.asarray(losses, dtype=np.float64)
    if losses.size <= 1:
        return 0.0
    return float(np.mean((losses - losses.mean()) ** 2))


def groupwise_variance(model: ToyModel, meta_set: Batch, attribute: int, expected_groups=None) -> float:
    """Population variance of per-group mean cross-entropy for one attribute."""
    logits, _, _ = model.forward(meta_set.images)
    per_sample = per_sample_cross_entropy(logits, meta_set.labels)
    return variance_of_losses(group_losses(per_sample, meta_set.attrs[:, attribute], expected_groups))


def meta_loss_terms(model: ToyModel, meta_set: Batch, expected_groups=None) -> np.ndarray:
    """Per-attribute group-wise variance, sharing one forward pass."""
    logits, _, _ = model.forward(meta_set.images)
    per_sample = per_sample_cross_entropy(logits, meta_set.labels)
    k = meta_set.attrs.shape[1]
    expected_groups = expected_groups or [None] * k
    return np.array(
        [variance_of_losses(group_losses(per_sample, meta_set.attrs[:, i], expected_groups[i])) for i in range(k)]
    )


def meta_step(w, meta_grad, eta: float) -> FairWeights:
    """Gradient step on the weights followed by projection onto ``w >= 0``."""
    new = np.maximum(0.0, _weights(w) - eta * np.asarray(meta_grad, dtype=np.float64))
    return FairWeights(new + 0.0)


def fd_gradient(loss_fn: Callable[[np.ndarray], float], w: np.ndarray, h: float) -> np.ndarray:
    """Central finite-difference gradient of ``loss_fn`` at ``w``."""
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(w)
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        grad[i] = (loss_fn(w + e) - loss_fn(w - e)) / (2.0 * h)
    return grad


@dataclass
class MetaHistory:
    weights: list = field(default_factory=list)
    terms: list = field(default_factory=list)
    meta_loss: list = field(default_factory=list)
    gradients: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "w": [list(map(float, w)) for w in self.weights],
            "variance_terms": [list(map(float, t)) for t in self.terms],
            "meta_loss": [float(v) for v in self.meta_loss],
            "meta_grad": [list(map(float, g)) for g in self.gradients],
        }


def meta_optimize(
    step_loss: Callable[[int], Callable[[np.ndarray], float]],
    w0,
    cfg: MetaConfig,
    terms_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
):
    """Run ``cfg.meta_iterations_T`` projected FD-gradient steps on the weights.

    ``step_loss(t)`` returns the meta-loss as a function of ``w`` for
    iteration ``t`` (it may close over a freshly sampled mini-batch). The
    history records ``w`` and the loss before every step and after the last.
    """
    w = FairWeights(_weights(w0).copy())
    hist = MetaHistory()
    loss_fn = None
    for t in range(cfg.meta_iterations_T):
        loss_fn = step_loss(t)
        hist.weights.append(w.tolist())
        hist.meta_loss.append(float(loss_fn(w.w)))
        if terms_fn is not None:
            hist.terms.append(list(terms_fn(w.w)))
        g = fd_gradient(loss_fn, w.w, cfg.fd_step)
        hist.gradients.append(g.tolist())
        w = meta_step(w, g, cfg.eta)
    hist.weights.append(w.tolist())
    if loss_fn is not None:
        hist.meta_loss.append(float(loss_fn(w.w)))
    return w, hist


def learn_weights(
    model: ToyModel,
    train_set: Batch,
    meta_set: Batch,
    cfg: MetaConfig | None = None,
    snnl_params: SnnlParams | None = None,
    w0=None,
    meta_batch: Optional[int] = None,
):
    """Meta-learn attribute weights; the model itself is left unchanged.

    Each iteration draws a training mini-batch of ``snnl_params.batch_b``
    samples; the meta loss uses the whole meta set unless ``meta_batch`` is
    given.
    """
    cfg = cfg or MetaConfig()
    snnl_params = snnl_params or SnnlParams()
    k = train_set.attrs.shape[1]
    w0 = np.ones(k) if w0 is None else w0
    rng = np.random.default_rng(cfg.seed)
    expected = [sorted(int(g) for g in np.unique(train_set.attrs[:, i]) if g >= 0) for i in range(k)]
    for i in range(k):
        group_losses(np.zeros(len(meta_set)), meta_set.attrs[:, i], expected[i])  # fail early on empty groups
    state = {}

    def step_loss(t):
        idx = np.sort(rng.choice(len(train_set), size=min(snnl_params.batch_b, len(train_set)), replace=False))
        per_attr = attribute_gradients(model, train_set.subset(idx), snnl_params)
        meta = meta_set
        if meta_batch is not None and meta_batch < len(meta_set):
            meta = meta_set.subset(np.sort(rng.choice(len(meta_set), size=meta_batch, replace=False)))

        def terms(w):
            stepped = simulate_update(model, mix_gradients(per_attr, w), cfg.alpha)
            return meta_loss_terms(stepped, meta, expected)

        state["terms"] = terms
        return lambda w: float(terms(w).sum())

    return meta_optimize(step_loss, w0, cfg, terms_fn=lambda w: state["terms"](w))


def joint_gammas(model: ToyModel, data: Batch, w, params: SnnlParams | None = None) -> np.ndarray:
    """Channel importance ``sum_i w_i * gamma_c^(i)``; lower is pruned first."""
    w = _weights(w)
    total = np.zeros(model.config.feature_dim)
    for i, wi in enumerate(w):
        if wi != 0.0:
            total += wi * channel_gammas(model, data, i, params)
    return total


def meta_prune(
    model: ToyModel,
    train_set: Batch,
    meta_set: Batch,
    cfg: MetaConfig | None = None,
    prune_cfg: PruneConfig | None = None,
    snnl_params: SnnlParams | None = None,
    val_set: Optional[Batch] = None,
    fair_attribute: int = 0,
):
    """Learn weights, then prune by the weighted channel score.

    Accept/revert decisions use fairness on ``fair_attribute`` of ``val_set``
    (the meta set when no validation set is given). Returns
    ``(model, weights, history)``.
    """
    cfg = cfg or MetaConfig()
    snnl_params = snnl_params or SnnlParams()
    w, meta_hist = learn_weights(model, train_set, meta_set, cfg, snnl_params)
    pruned, prune_hist = iterative_prune(
        model,
        train_set,
        val_set if val_set is not None else meta_set,
        fair_attribute,
        prune_cfg,
        snnl_params,
        scorer=lambda m: joint_gammas(m, train_set, w, snnl_params),
    )
    history = {"meta": meta_hist.to_dict(), "prune": prune_hist.to_dict(), "final_w": w.tolist()}
    return pruned, w, history
