"""LAMB (layer-wise trust ratio) and plain Adam over named numpy parameter blocks."""

from __future__ import annotations

from typing import Mapping

import numpy as np


def _moments(name, p, g, state, beta1, beta2):
    if not np.all(np.isfinite(g)):
        raise FloatingPointError(f"non-finite gradient in parameter block {name!r}")
    slot = state.setdefault(name, {"m": np.zeros_like(p), "v": np.zeros_like(p)})
    slot["m"] = beta1 * slot["m"] + (1.0 - beta1) * g
    slot["v"] = beta2 * slot["v"] + (1.0 - beta2) * g * g
    t = state["step"]
    return slot["m"] / (1.0 - beta1**t), slot["v"] / (1.0 - beta2**t)


def trust_ratio(p: np.ndarray, r: np.ndarray) -> float:
    p_norm = float(np.linalg.norm(p))
    r_norm = float(np.linalg.norm(r))
    return p_norm / r_norm if p_norm > 0 and r_norm > 0 else 1.0


def lamb_step(params: Mapping, grads: Mapping, state: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-6, weight_decay=0.0) -> None:
    """Update ``params`` (name -> array) in place.

    Per block: bias-corrected Adam direction ``r = m_hat/(sqrt(v_hat)+eps) + wd*p``
    scaled by ``||p|| / ||r||`` (1 when either norm is zero).
    """
    state["step"] = state.get("step", 0) + 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m_hat, v_hat = _moments(name, p, g, state, beta1, beta2)
        r = m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p
        p -= lr * trust_ratio(p, r) * r


def adam_step(params: Mapping, grads: Mapping, state: dict, lr: float, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.0) -> None:
    state["step"] = state.get("step", 0) + 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m_hat, v_hat = _moments(name, p, g, state, beta1, beta2)
        p -= lr * (m_hat / (np.sqrt(v_hat) + eps) + weight_decay * p)


OPTIMIZERS = {"lamb": lamb_step, "adam": adam_step}
