"""Two-layer tanh branch encoder and the pooled-feature classification head.

The encoder stands in for a fine-tuned language model: it maps a feature
vector to logits over a small vocabulary, from which the score-token entries
are later gathered. Batches are rows; parameter gradients are summed over rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import ValidationError, as_float_array


def _uniform_init(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    s = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-s, s, size=shape)


@dataclass
class BranchEncoder:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray

    PARAM_NAMES = ("W1", "b1", "W2", "b2")

    def __post_init__(self):
        self.W1 = as_float_array(self.W1, "W1", ndim=2)
        self.b1 = as_float_array(self.b1, "b1", ndim=1)
        self.W2 = as_float_array(self.W2, "W2", ndim=2)
        self.b2 = as_float_array(self.b2, "b2", ndim=1)
        hidden, _ = self.W1.shape
        if self.b1.size != hidden or self.W2.shape[1] != hidden or self.b2.size != self.W2.shape[0]:
            raise ValidationError(
                f"inconsistent encoder shapes: W1{self.W1.shape} b1{self.b1.shape} "
                f"W2{self.W2.shape} b2{self.b2.shape}")

    @classmethod
    def init(cls, feature_dim: int, hidden_dim: int, vocab_size: int,
             rng: np.random.Generator) -> "BranchEncoder":
        return cls(
            _uniform_init(rng, (hidden_dim, feature_dim), feature_dim),
            _uniform_init(rng, hidden_dim, feature_dim),
            _uniform_init(rng, (vocab_size, hidden_dim), hidden_dim),
            _uniform_init(rng, vocab_size, hidden_dim),
        )

    @property
    def feature_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W1.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.W2.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}


@dataclass(frozen=True)
class EncoderCache:
    x: np.ndarray
    hidden: np.ndarray
    feature_dim: int
    hidden_dim: int
    vocab_size: int


def encode(enc: BranchEncoder, x) -> tuple[np.ndarray, EncoderCache]:
    """``W2 @ tanh(W1 @ x + b1) + b2`` for a vector or a batch of row vectors."""
    x = as_float_array(x, "x")
    if x.shape[-1] != enc.feature_dim:
        raise ValidationError(f"encoder expects {enc.feature_dim} features, got {x.shape[-1]}")
    hidden = np.tanh(x @ enc.W1.T + enc.b1)
    logits = hidden @ enc.W2.T + enc.b2
    return logits, EncoderCache(x, hidden, enc.feature_dim, enc.hidden_dim, enc.vocab_size)


def encode_backward(enc: BranchEncoder, cache: EncoderCache, grad_logits):
    """Returns ``(grads, grad_x)`` where ``grads`` maps parameter name to gradient."""
    if (cache.feature_dim, cache.hidden_dim, cache.vocab_size) != (
            enc.feature_dim, enc.hidden_dim, enc.vocab_size):
        raise ValidationError("encoder cache does not match encoder dimensions")
    g = as_float_array(grad_logits, "grad_logits")
    if g.shape != cache.hidden.shape[:-1] + (cache.vocab_size,):
        raise ValidationError(f"upstream gradient has shape {g.shape}")
    x2 = cache.x.reshape(-1, cache.feature_dim)
    h2 = cache.hidden.reshape(-1, cache.hidden_dim)
    g2 = g.reshape(-1, cache.vocab_size)
    d_hidden = g2 @ enc.W2
    d_pre = d_hidden * (1.0 - h2 ** 2)
    grads = {
        "W1": d_pre.T @ x2,
        "b1": d_pre.sum(axis=0),
        "W2": g2.T @ h2,
        "b2": g2.sum(axis=0),
    }
    grad_x = (d_pre @ enc.W1).reshape(cache.x.shape)
    return grads, grad_x


@dataclass
class PoolingHead:
    """Affine ``(K+1)``-way head over pooled features: the classifier-head baseline."""

    W_cls: np.ndarray
    b_cls: np.ndarray

    PARAM_NAMES = ("W_cls", "b_cls")

    def __post_init__(self):
        self.W_cls = as_float_array(self.W_cls, "W_cls", ndim=2)
        self.b_cls = as_float_array(self.b_cls, "b_cls", ndim=1)
        if self.b_cls.size != self.W_cls.shape[0]:
            raise ValidationError(f"b_cls length {self.b_cls.size} != head rows {self.W_cls.shape[0]}")

    @classmethod
    def init(cls, feature_dim: int, n_levels: int, rng: np.random.Generator) -> "PoolingHead":
        return cls(_uniform_init(rng, (n_levels, feature_dim), feature_dim),
                   _uniform_init(rng, n_levels, feature_dim))

    @property
    def feature_dim(self) -> int:
        return self.W_cls.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}


def baseline_forward(head: PoolingHead, x) -> tuple[np.ndarray, np.ndarray]:
    x = as_float_array(x, "x")
    if x.shape[-1] != head.feature_dim:
        raise ValidationError(f"head expects {head.feature_dim} features, got {x.shape[-1]}")
    return x @ head.W_cls.T + head.b_cls, x


def baseline_backward(head: PoolingHead, x_cache: np.ndarray, grad_logits):
    g = as_float_array(grad_logits, "grad_logits")
    if g.shape[-1] != head.W_cls.shape[0] or g.shape[:-1] != x_cache.shape[:-1]:
        raise ValidationError(f"upstream gradient has shape {g.shape}")
    x2 = x_cache.reshape(-1, head.feature_dim)
    g2 = g.reshape(-1, head.W_cls.shape[0])
    grads = {"W_cls": g2.T @ x2, "b_cls": g2.sum(axis=0)}
    return grads, (g2 @ head.W_cls).reshape(x_cache.shape)
