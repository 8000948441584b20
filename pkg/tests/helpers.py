"""Shared oracles for the test suite."""

import time

import numpy as np

from fairskin.config import config_from_dict
from fairskin.model import activation_pattern, loss_and_grads, same_pattern
from fairskin.pipeline import run_pipeline


def fd_gradient_check(model, batch, loss_kind, n_probes, rng, h=1e-5, floor=1e-6, **kw):
    """Compare analytic gradients with central differences on random parameters.

    Probes whose +/-h perturbation changes a ReLU state or a max-pool winner
    sit on a kink of the loss and are redrawn. Returns
    ``(max_relative_error, n_checked, n_redrawn)``.
    """
    _, grads = loss_and_grads(model, batch, loss_kind, **kw)
    names = list(model.params)
    sizes = np.array([model.params[k].size for k in names])
    worst, checked, redrawn = 0.0, 0, 0
    while checked < n_probes:
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        flat = model.params[name].reshape(-1)
        j = int(rng.integers(flat.size))
        orig = flat[j]
        flat[j] = orig + h
        up, pat_up = loss_and_grads(model, batch, loss_kind, **kw)[0], activation_pattern(model, batch.images)
        flat[j] = orig - h
        down, pat_down = loss_and_grads(model, batch, loss_kind, **kw)[0], activation_pattern(model, batch.images)
        flat[j] = orig
        if not same_pattern(pat_up, pat_down):
            redrawn += 1
            if redrawn > 20 * n_probes:
                raise RuntimeError("too many probes straddle a kink")
            continue
        fd = (up - down) / (2 * h)
        an = grads[name].reshape(-1)[j]
        worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), floor))
        checked += 1
    return worst, checked, redrawn


def debias_run(seed, out):
    """One seeded train / meta-prune / evaluate pipeline run on the default
    biased synthetic set; returns the numbers the debiasing criteria need."""
    t0 = time.perf_counter()
    cfg = config_from_dict({"seed": int(seed), "out": str(out), "stages": ["train", "meta-prune", "evaluate"]})
    state = run_pipeline(cfg)
    base, mp = state.reports["baseline"], state.reports["meta_pruned"]
    return {
        "seed": int(seed),
        "base_eodds": base.eodds["skin"],
        "meta_eodds": mp.eodds["skin"],
        "base_acc": base.accuracy,
        "meta_acc": mp.accuracy,
        "w": state.histories["meta_prune"]["final_w"],
        "seconds": time.perf_counter() - t0,
    }


def quadratic_surrogate(seed, k=3, d=6, alpha=0.3):
    """Meta problem with a closed-form gradient.

    The inner step is ``theta' = theta - alpha * G w`` for fixed per-attribute
    gradients ``G``; the meta loss is ``0.5 (theta' - t)^T H (theta' - t)``.
    Returns ``(loss, grad, lipschitz)`` where ``lipschitz`` bounds the
    curvature of the loss in ``w``.
    """
    rng = np.random.default_rng(seed)
    theta = rng.normal(size=d)
    G = rng.normal(size=(d, k))
    M = rng.normal(size=(d, d))
    H = M @ M.T + np.eye(d)
    target = rng.normal(size=d)

    def loss(w):
        r = theta - alpha * G @ w - target
        return float(0.5 * r @ H @ r)

    def grad(w):
        r = theta - alpha * G @ w - target
        return -alpha * G.T @ H @ r

    return loss, grad, float(np.linalg.eigvalsh(alpha**2 * G.T @ H @ G).max())
