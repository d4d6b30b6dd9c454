"""Cross-entropy, expected score and the distance-aware training objective.

Every function accepts a single logit vector of shape ``(K+1,)`` or a batch of
shape ``(n, K+1)``; gradients are returned per row (no batch reduction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._validation import ValidationError, as_float_array, check_levels


@dataclass
class ObjectiveConfig:
    lambda_logit: float = 0.0
    beta: float = 0.01
    smooth_l1_delta: float = 1.0
    distance_aware: bool = False

    def __post_init__(self):
        if not np.isfinite(self.lambda_logit):
            raise ValidationError("lambda_logit must be finite")
        if not self.beta >= 0:
            raise ValidationError(f"beta must be >= 0, got {self.beta}")
        if not self.smooth_l1_delta > 0:
            raise ValidationError(f"smooth_l1_delta must be > 0, got {self.smooth_l1_delta}")

    @property
    def lambda_value(self) -> float:
        return float(expit(self.lambda_logit))


@dataclass
class LossBundle:
    total: np.ndarray
    ce: np.ndarray
    dist: np.ndarray
    lambda_value: float
    grad_z: np.ndarray
    grad_lambda_logit: np.ndarray
    reg: float = 0.0


def softmax_stable(z) -> np.ndarray:
    z = as_float_array(z, "z")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_sum_exp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1)
    return m + np.log(np.exp(z - m[..., None]).sum(axis=-1))


def _gold(z: np.ndarray, y) -> np.ndarray:
    y = check_levels(y, z.shape[-1] - 1, "y")
    if y.shape != z.shape[:-1]:
        raise ValidationError(f"gold shape {y.shape} does not match logits {z.shape}")
    return y


def _pick(z: np.ndarray, y: np.ndarray) -> np.ndarray:
    return np.take_along_axis(z, y[..., None], axis=-1)[..., 0]


def cross_entropy(z, y) -> tuple[np.ndarray, np.ndarray]:
    """``-log p_y`` via log-sum-exp, and its gradient ``p - onehot(y)``."""
    z = as_float_array(z, "z")
    y = _gold(z, y)
    loss = log_sum_exp(z) - _pick(z, y)
    grad = softmax_stable(z)
    np.put_along_axis(grad, y[..., None], _pick(grad, y)[..., None] - 1.0, axis=-1)
    return loss, grad


def expected_score(p) -> tuple[np.ndarray, np.ndarray]:
    """Mean level under ``p`` and its gradient w.r.t. the logits that produced ``p``."""
    p = np.asarray(p, dtype=np.float64)
    levels = np.arange(p.shape[-1], dtype=np.float64)
    es = p @ levels
    grad = p * (levels - es[..., None])
    return es, grad


def smooth_l1(d, delta: float = 1.0) -> tuple[np.ndarray, np.ndarray]:
    if not delta > 0:
        raise ValidationError(f"delta must be > 0, got {delta}")
    d = np.asarray(d, dtype=np.float64)
    quad = np.abs(d) <= delta
    value = np.where(quad, 0.5 * d * d / delta, np.abs(d) - 0.5 * delta)
    deriv = np.where(quad, d / delta, np.sign(d))
    return value, deriv


def combined_loss(z, y, cfg: ObjectiveConfig) -> LossBundle:
    """``CE + lam * SmoothL1(E[s] - y) + beta * (lam - 0.5)**2`` with ``lam = sigmoid(lambda_logit)``.

    With ``cfg.distance_aware`` off the result is plain cross-entropy and the
    distance path contributes nothing, not even to ``grad_lambda_logit``.
    """
    z = as_float_array(z, "z")
    y = _gold(z, y)
    ce, grad_z = cross_entropy(z, y)
    lam = cfg.lambda_value
    if not cfg.distance_aware:
        zeros = np.zeros_like(ce)
        return LossBundle(ce.copy(), ce, zeros, lam, grad_z, zeros.copy())

    p = softmax_stable(z)
    es, d_es = expected_score(p)
    dist, d_dist = smooth_l1(es - y, cfg.smooth_l1_delta)
    reg = cfg.beta * (lam - 0.5) ** 2
    total = ce + lam * dist + reg
    grad_z = grad_z + lam * d_dist[..., None] * d_es
    # The regularizer depends on lambda only; it never reaches z.
    grad_lambda_logit = (dist + 2.0 * cfg.beta * (lam - 0.5)) * lam * (1.0 - lam)
    return LossBundle(total, ce, dist, lam, grad_z, grad_lambda_logit, reg)
