"""Decision-level gated fusion of a multimodal and a text-only logit vector.

The gate sees only the two score-logit vectors::

    h     = tanh([z_m; z_t])
    alpha = sigmoid(w . h + b)
    z     = alpha * z_m + (1 - alpha) * z_t
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ._validation import ValidationError, as_float_array


@dataclass
class GateParameters:
    w: np.ndarray
    b: float = 0.0

    def __post_init__(self):
        self.w = as_float_array(self.w, "w", ndim=1)
        self.b = float(self.b)
        if not np.isfinite(self.b):
            raise ValidationError("gate bias must be finite")
        if self.w.size % 2:
            raise ValidationError(f"gate weight length must be 2(K+1), got {self.w.size}")

    @classmethod
    def zeros(cls, n_levels: int) -> "GateParameters":
        """Neutral gate: alpha = 0.5 for every input."""
        return cls(np.zeros(2 * n_levels), 0.0)

    @property
    def n_levels(self) -> int:
        return self.w.size // 2


@dataclass(frozen=True)
class FusionTrace:
    h: np.ndarray
    a: np.ndarray
    alpha: np.ndarray
    z_m: np.ndarray
    z_t: np.ndarray
    w: np.ndarray
    b: float


def fuse_forward(z_m, z_t, params: GateParameters) -> tuple[np.ndarray, FusionTrace]:
    z_m = as_float_array(z_m, "z_m").copy()
    z_t = as_float_array(z_t, "z_t").copy()
    if z_m.shape != z_t.shape:
        raise ValidationError(f"branch logits differ in shape: {z_m.shape} vs {z_t.shape}")
    if z_m.shape[-1] != params.n_levels:
        raise ValidationError(
            f"gate built for {params.n_levels} levels, logits have {z_m.shape[-1]}")
    h = np.tanh(np.concatenate([z_m, z_t], axis=-1))
    a = h @ params.w + params.b
    alpha = expit(a)
    z = alpha[..., None] * z_m + (1.0 - alpha[..., None]) * z_t
    return z, FusionTrace(h, a, alpha, z_m, z_t, params.w.copy(), params.b)


def fuse_backward(trace: FusionTrace, params: GateParameters, grad_z):
    """Gradients of a scalar loss w.r.t. ``z_m``, ``z_t``, ``w`` and ``b``.

    For a batch, ``grad_w`` and ``grad_b`` are summed over rows.
    """
    if (trace.w.shape != params.w.shape or trace.b != params.b
            or not np.array_equal(trace.w, params.w)):
        raise ValidationError("fusion trace was not produced with these gate parameters")
    grad_z = as_float_array(grad_z, "grad_z")
    if grad_z.shape != trace.z_m.shape:
        raise ValidationError(f"grad_z shape {grad_z.shape} != logits shape {trace.z_m.shape}")
    alpha = trace.alpha
    d_alpha = np.sum(grad_z * (trace.z_m - trace.z_t), axis=-1)
    d_a = d_alpha * alpha * (1.0 - alpha)
    grad_w = d_a[..., None] * trace.h
    grad_b = d_a
    d_c = d_a[..., None] * params.w * (1.0 - trace.h ** 2)
    n = params.n_levels
    grad_z_m = alpha[..., None] * grad_z + d_c[..., :n]
    grad_z_t = (1.0 - alpha[..., None]) * grad_z + d_c[..., n:]
    if grad_w.ndim > 1:
        grad_w = grad_w.reshape(-1, grad_w.shape[-1]).sum(axis=0)
        grad_b = grad_b.sum()
    return grad_z_m, grad_z_t, grad_w, float(grad_b)
