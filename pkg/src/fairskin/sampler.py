"""Adaptive FST-aware blending of original and tone-transformed samples.

Each original sample has a one-to-one synthetic counterpart produced by the
tone transform. During training a sample is swapped for its counterpart with
a probability attached to the Fitzpatrick group the swap would add to, i.e.
the counterpart's FST. Groups that are rare in the original data start with a
high probability; groups whose validation AUC stays below ``tau`` have their
probability raised by ``delta`` every evaluation period, capped at 0.9.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import BadDistribution, MissingCounterpart

N_FST = 6
P_TARGET = 1.0 / N_FST
P_CAP = 0.9


@dataclass(frozen=True)
class SampleRecord:
    image: object
    label: int
    fst: Optional[int] = None
    age_group: Optional[int] = None
    gender: Optional[int] = None
    mask: object = None
    index: Optional[int] = None
    synthetic: bool = False


@dataclass(frozen=True)
class BlendState:
    """Replacement probabilities for FST I..VI (index 0 is FST I)."""

    p_synth: tuple = (0.0,) * N_FST
    tau: float = 0.7
    delta: float = 0.05
    eval_period_K: int = 5
    history: tuple = field(default=(), compare=False)

    def prob(self, fst: int) -> float:
        return self.p_synth[int(fst) - 1]

    def to_dict(self) -> dict:
        return {
            "p_synth": [float(p) for p in self.p_synth],
            "tau": self.tau,
            "delta": self.delta,
            "eval_period_K": self.eval_period_K,
        }


def fst_distribution(fst_values: Sequence[int]) -> np.ndarray:
    """Fractions of FST I..VI among ``fst_values``; missing entries (None, 0, <0) are skipped."""
    vals = np.array([int(v) for v in fst_values if v is not None and int(v) >= 1], dtype=int)
    if vals.size == 0:
        raise BadDistribution("no FST labels available")
    counts = np.bincount(vals - 1, minlength=N_FST)[:N_FST]
    return counts / counts.sum()


def init_probs(fst_distribution, tau: float = 0.7, delta: float = 0.05, eval_period_K: int = 5) -> BlendState:
    """Initial replacement probability ``max(0, (1/6 - P_orig) / (1/6))`` per FST."""
    p = np.asarray(fst_distribution, dtype=np.float64)
    if p.shape != (N_FST,):
        raise BadDistribution(f"expected {N_FST} FST fractions, got shape {p.shape}")
    if np.any(p < 0) or not np.all(np.isfinite(p)):
        raise BadDistribution("FST fractions must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-9:
        raise BadDistribution(f"FST fractions sum to {p.sum()!r}, not 1")
    probs = np.maximum(0.0, (P_TARGET - p) / P_TARGET)
    return BlendState(tuple(float(x) for x in probs), tau, delta, eval_period_K)


def maybe_replace(sample: SampleRecord, synth: Optional[SampleRecord], state: BlendState, rng) -> SampleRecord:
    """Bernoulli swap of ``sample`` for its synthetic counterpart.

    The probability is looked up by the counterpart's FST (the group the swap
    contributes to); if the counterpart carries no FST the original's is used.
    """
    if synth is None:
        if sample.fst is not None and state.prob(sample.fst) > 0:
            raise MissingCounterpart(f"no synthetic counterpart for sample {sample.index!r}")
        return sample
    fst = synth.fst if synth.fst is not None else sample.fst
    if fst is None:
        return sample
    p = state.prob(fst)
    if p <= 0.0:
        return sample
    return synth if rng.random() < p else sample


def replacement_mask(synth_fst: np.ndarray, state: BlendState, rng) -> np.ndarray:
    """Vectorised :func:`maybe_replace` over a whole epoch.

    ``synth_fst`` holds the counterpart FST (1..6) per sample, or <=0 where no
    counterpart exists. Returns a boolean array: True means use the synthetic
    image.
    """
    synth_fst = np.asarray(synth_fst, dtype=int)
    probs = np.array(state.p_synth)
    p = np.where(synth_fst >= 1, probs[np.clip(synth_fst, 1, N_FST) - 1], 0.0)
    draws = rng.random(synth_fst.shape[0])
    return draws < p


def update_probs(state: BlendState, per_fst_auc) -> BlendState:
    """Raise the probability of each FST group whose AUC fell below ``tau``.

    ``per_fst_auc`` maps FST (1..6) to an AUC, or is a length-6 sequence; a
    value of ``None``/NaN marks a group with no evaluation signal, which keeps
    its probability. Every probability comes back at most 0.9.
    """
    if isinstance(per_fst_auc, Mapping):
        aucs = [per_fst_auc.get(i, None) for i in range(1, N_FST + 1)]
    else:
        aucs = list(per_fst_auc)
        if len(aucs) != N_FST:
            raise ValueError(f"expected {N_FST} AUC values, got {len(aucs)}")
    # probabilities that start above the cap (absent groups) are capped here
    new = [min(p, P_CAP) for p in state.p_synth]
    for i, auc in enumerate(aucs):
        if auc is None or not np.isfinite(auc):
            continue
        if auc < state.tau:
            new[i] = min(new[i] + state.delta, P_CAP)
    return replace(state, p_synth=tuple(new), history=state.history + (tuple(new),))


def expected_blend_counts(orig_counts, synth_counts, state: BlendState, joint=None) -> np.ndarray:
    """Expected FST counts after one blending pass.

    ``orig_counts[i]`` counts originals of FST i+1 and ``synth_counts[j]`` counts
    counterparts landing in FST j+1. ``joint[i, j]`` gives how many originals of
    FST i+1 have a counterpart in FST j+1; when omitted, the counterpart FST is
    taken as independent of the original FST.
    """
    orig = np.asarray(orig_counts, dtype=np.float64)
    synth = np.asarray(synth_counts, dtype=np.float64)
    n = orig.sum()
    if joint is None:
        joint = np.outer(orig, synth) / n
    joint = np.asarray(joint, dtype=np.float64)
    p = np.array(state.p_synth)
    moved = joint * p[None, :]
    return orig - moved.sum(axis=1) + moved.sum(axis=0)


def chi_square_to_uniform(counts) -> float:
    """Pearson chi-square distance between the FST distribution and uniform."""
    frac = np.asarray(counts, dtype=np.float64)
    frac = frac / frac.sum()
    u = 1.0 / frac.size
    return float(np.sum((frac - u) ** 2 / u))
