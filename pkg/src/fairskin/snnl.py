"""Soft nearest neighbour loss over sensitive-attribute labels.

For every sample the loss takes the share of its exponential-kernel
neighbour mass (``exp(-||f_i - f_j||^2 / T)``, ``j != i``) that carries the
same attribute label, and averages the negative log of that share. Values
near zero mean the feature separates the attribute groups.

Everything is computed in log space so far-apart samples do not underflow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateBatch

LOG_FLOOR = 1e-12


@dataclass
class SnnlParams:
    temperature_T: float = 1.0
    batch_b: int = 64

    def __post_init__(self):
        if not self.temperature_T > 0:
            raise ValueError("temperature_T must be positive")
        if self.batch_b < 2:
            raise ValueError("batch_b must be >= 2")


def _as_matrix(features) -> np.ndarray:
    f = np.asarray(features, dtype=np.float64)
    if f.ndim == 1:
        f = f[:, None]
    if f.ndim != 2:
        raise ValueError(f"features must be 1-D or 2-D, got shape {f.shape}")
    return f


def _log_terms(f: np.ndarray, attrs: np.ndarray, T: float):
    b = f.shape[0]
    diff = f[:, None, :] - f[None, :, :]
    logits = -np.einsum("ijk,ijk->ij", diff, diff) / T
    np.fill_diagonal(logits, -np.inf)
    same = attrs[:, None] == attrs[None, :]
    np.fill_diagonal(same, False)
    log_s = logsumexp(logits, axis=1)
    masked = np.where(same, logits, -np.inf)
    has_same = same.any(axis=1)
    log_p = np.full(b, -np.inf)
    if has_same.any():
        log_p[has_same] = logsumexp(masked[has_same], axis=1)
    return diff, logits, same, log_s, log_p


def snnl(features, attrs, params: SnnlParams | None = None, temperature: float | None = None) -> float:
    """Soft nearest neighbour loss of ``features`` with respect to ``attrs``.

    ``features`` is either one scalar per sample (shape ``(b,)``) or one vector
    per sample (shape ``(b, d)``). Samples with no same-label neighbour use a
    floor of 1e-12 inside the log.
    """
    T = _temperature(params, temperature)
    f = _as_matrix(features)
    attrs = np.asarray(attrs).ravel()
    if f.shape[0] < 2:
        raise DegenerateBatch("soft nearest neighbour loss needs at least two samples")
    if attrs.shape[0] != f.shape[0]:
        raise ValueError("features and attrs differ in length")
    _, _, _, log_s, log_p = _log_terms(f, attrs, T)
    log_ratio = np.maximum(log_p - log_s, np.log(LOG_FLOOR))
    return float(-log_ratio.mean()) + 0.0  # no negative zero


def snnl_and_grad(features, attrs, temperature: float = 1.0):
    """Loss value and its gradient with respect to ``features`` (same shape)."""
    f = _as_matrix(features)
    attrs = np.asarray(attrs).ravel()
    b = f.shape[0]
    if b < 2:
        raise DegenerateBatch("soft nearest neighbour loss needs at least two samples")
    diff, logits, same, log_s, log_p = _log_terms(f, attrs, temperature)
    log_ratio = log_p - log_s
    active = log_ratio > np.log(LOG_FLOOR)
    loss = float(-np.maximum(log_ratio, np.log(LOG_FLOOR)).mean()) + 0.0

    soft_s = np.exp(logits - log_s[:, None])
    with np.errstate(invalid="ignore", over="ignore"):
        soft_p = np.where(same, np.exp(logits - log_p[:, None]), 0.0)
    coeff = (soft_s - soft_p) * active[:, None] * (-2.0 / (temperature * b))
    sym = coeff + coeff.T
    grad = np.einsum("ij,ijk->ik", sym, diff)
    if np.ndim(features) == 1:
        grad = grad[:, 0]
    return loss, grad


def snnl_naive(features, attrs, temperature: float = 1.0) -> float:
    """Direct double loop, kept as a reference for the vectorised version."""
    f = _as_matrix(features)
    attrs = list(np.asarray(attrs).ravel())
    b = f.shape[0]
    total = 0.0
    for i in range(b):
        num = 0.0
        den = 0.0
        for j in range(b):
            if j == i:
                continue
            d2 = float(np.sum((f[i] - f[j]) ** 2))
            e = np.exp(-d2 / temperature)
            den += e
            if attrs[i] == attrs[j]:
                num += e
        total += -np.log(max(num / den, LOG_FLOOR))
    return total / b


def snnl_per_channel(features, attrs, temperature: float = 1.0) -> np.ndarray:
    """Scalar-feature SNNL for every column of a ``(b, C)`` feature matrix at once."""
    f = np.asarray(features, dtype=np.float64)
    attrs = np.asarray(attrs).ravel()
    b, _ = f.shape
    if b < 2:
        raise DegenerateBatch("soft nearest neighbour loss needs at least two samples")
    ft = f.T  # (C, b)
    logits = -((ft[:, :, None] - ft[:, None, :]) ** 2) / temperature
    eye = np.eye(b, dtype=bool)
    logits[:, eye] = -np.inf
    same = (attrs[:, None] == attrs[None, :]) & ~eye
    log_s = logsumexp(logits, axis=2)
    log_p = np.full(log_s.shape, -np.inf)
    rows = same.any(axis=1)
    if rows.any():
        masked = np.where(same[None, :, :], logits, -np.inf)
        log_p[:, rows] = logsumexp(masked[:, rows, :], axis=2)
    log_ratio = np.maximum(log_p - log_s, np.log(LOG_FLOOR))
    return -log_ratio.mean(axis=1) + 0.0


def _temperature(params, temperature):
    if temperature is not None:
        if not temperature > 0:
            raise ValueError("temperature must be positive")
        return float(temperature)
    return (params or SnnlParams()).temperature_T
