"""Scikit-learn compatible DLOM estimators.

``DLOMClassifier``
    Single text branch; score logits are gathered from the branch's
    vocabulary logits. ``distance_aware=True`` adds the expected-score
    SmoothL1 term with a learnable weight (the DLOM-DA objective).
``GatedFusionDLOMClassifier``
    Text and multimodal branches joined by the decision-level gate. ``X`` is
    the horizontal stack ``[x_text | x_visual]``; ``n_text_features`` splits it.
``PoolingHeadClassifier``
    Affine (K+1)-way head on the features, the conventional classifier baseline.

All three take rubric scores as ``y`` and predict rubric scores.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ._validation import ValidationError
from .backbone import (BranchEncoder, PoolingHead, baseline_backward, baseline_forward,
                       encode, encode_backward)
from .fusion import GateParameters, fuse_backward, fuse_forward
from .objectives import ObjectiveConfig, combined_loss, softmax_stable
from .score_space import ScoreScale, ScoreTokenSet, decide, extract_score_logits, from_external

INFERENCE_STRATEGIES = ("fused", "text_only", "mm_only")


class TrainingDivergence(RuntimeError):
    """Loss became non-finite during training."""


class _DLOMBase(ClassifierMixin, BaseEstimator):
    """Shared training loop: gradient descent for a fixed number of epochs.

    ``batch_size=None`` (the default) takes one full-batch step per epoch; an
    integer switches to shuffled minibatches. Per-instance gradients are summed
    in row order and divided by the batch size. ``lambda_logit`` is updated
    once per epoch from the mean of its per-instance gradients.
    """

    def _resolve_scale(self, y) -> ScoreScale:
        lo = int(np.min(y)) if self.score_min is None else int(self.score_min)
        hi = int(np.max(y)) if self.score_max is None else int(self.score_max)
        return ScoreScale(hi - lo, lo)

    def _check_common(self):
        if int(self.epochs) < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size is not None and int(self.batch_size) < 1:
            raise ValidationError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")

    def _objective(self) -> ObjectiveConfig:
        return ObjectiveConfig(lambda_logit=0.0, beta=self.beta,
                               smooth_l1_delta=self.smooth_l1_delta,
                               distance_aware=bool(getattr(self, "distance_aware", False)))

    def fit(self, X, y, instance_ids=None):
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True)
        self._check_common()
        self.scale_ = self._resolve_scale(y)
        levels = np.asarray(from_external(self.scale_, y)).reshape(-1)
        self.classes_ = np.arange(self.scale_.offset, self.scale_.offset + self.scale_.n_levels)
        self.n_features_in_ = X.shape[1]
        ids = np.arange(len(y)).astype(str) if instance_ids is None else np.asarray(instance_ids)

        rng = np.random.default_rng(self.random_state)
        self._init_params(X, rng)
        self.objective_ = self._objective()
        self.loss_curve_ = []
        self.lambda_history_ = []

        n = len(y)
        bs = n if self.batch_size is None else int(self.batch_size)
        lr = float(self.learning_rate)
        for epoch in range(int(self.epochs)):
            order = rng.permutation(n)
            epoch_loss = 0.0
            lam_grad = 0.0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                z, cache = self._forward(X[idx])
                bundle = combined_loss(z, levels[idx], self.objective_)
                if not np.all(np.isfinite(bundle.total)):
                    bad = idx[~np.isfinite(bundle.total)][0]
                    raise TrainingDivergence(
                        f"non-finite loss at epoch {epoch}, instance {ids[bad]}")
                self._step(self._backward(cache, bundle.grad_z / len(idx)), lr)
                if not self._parameters_finite():
                    worst = idx[int(np.argmax(bundle.total))]
                    raise TrainingDivergence(
                        f"parameters overflowed at epoch {epoch}, instance {ids[worst]} "
                        f"(largest loss in batch {float(bundle.total.max()):.3g})")
                epoch_loss += float(bundle.total.sum())
                lam_grad += float(bundle.grad_lambda_logit.sum())
            if self.objective_.distance_aware:
                self.objective_.lambda_logit -= lr * lam_grad / n
            self.loss_curve_.append(epoch_loss / n)
            self.lambda_history_.append(self.objective_.lambda_value)
        self.lambda_logit_ = self.objective_.lambda_logit
        return self

    def _parameters_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self._parameters().values())

    def _step(self, grads, lr):
        for name, param in self._parameters().items():
            param -= lr * grads[name]

    def decision_function(self, X) -> np.ndarray:
        """Score-wise logits, one column per level."""
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return self._forward(X)[0]

    def predict_proba(self, X) -> np.ndarray:
        return softmax_stable(self.decision_function(X))

    def predict(self, X) -> np.ndarray:
        levels = np.atleast_1d(decide(self.decision_function(X)))
        return self.classes_[levels]


class DLOMClassifier(_DLOMBase):
    """Decision-level ordinal model on a single (text) branch."""

    def __init__(self, score_min=None, score_max=None, hidden_dim=32, vocab_size=None,
                 learning_rate=0.05, epochs=200, batch_size=None, distance_aware=False,
                 beta=0.01, smooth_l1_delta=1.0, random_state=0):
        self.score_min = score_min
        self.score_max = score_max
        self.hidden_dim = hidden_dim
        self.vocab_size = vocab_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.distance_aware = distance_aware
        self.beta = beta
        self.smooth_l1_delta = smooth_l1_delta
        self.random_state = random_state

    def _vocab(self) -> int:
        return 4 * self.scale_.n_levels if self.vocab_size is None else int(self.vocab_size)

    def _init_params(self, X, rng):
        self.tokens_ = ScoreTokenSet.spaced(self.scale_, self._vocab())
        self.encoder_ = BranchEncoder.init(X.shape[1], int(self.hidden_dim), self._vocab(), rng)

    def _parameters(self):
        return self.encoder_.params()

    def _forward(self, X):
        vocab, cache = encode(self.encoder_, X)
        return extract_score_logits(vocab, self.tokens_), cache

    def _backward(self, cache, grad_z):
        grad_vocab = np.zeros(grad_z.shape[:-1] + (self.encoder_.vocab_size,))
        grad_vocab[..., list(self.tokens_.token_ids)] = grad_z
        return encode_backward(self.encoder_, cache, grad_vocab)[0]


class GatedFusionDLOMClassifier(_DLOMBase):
    """Text and multimodal branches fused at the decision level by a scalar gate.

    ``multimodal_input`` selects what the multimodal branch reads: ``"visual"``
    (visual features only, the default) or ``"concat"`` (text and visual together).
    ``inference_strategy`` picks the logits used by ``predict``.
    """

    def __init__(self, n_text_features=None, score_min=None, score_max=None, hidden_dim=32,
                 vocab_size=None, learning_rate=0.05, epochs=200, batch_size=None,
                 distance_aware=False, beta=0.01, smooth_l1_delta=1.0,
                 multimodal_input="visual", inference_strategy="fused", random_state=0):
        self.n_text_features = n_text_features
        self.score_min = score_min
        self.score_max = score_max
        self.hidden_dim = hidden_dim
        self.vocab_size = vocab_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.distance_aware = distance_aware
        self.beta = beta
        self.smooth_l1_delta = smooth_l1_delta
        self.multimodal_input = multimodal_input
        self.inference_strategy = inference_strategy
        self.random_state = random_state

    def _vocab(self) -> int:
        return 4 * self.scale_.n_levels if self.vocab_size is None else int(self.vocab_size)

    def _split(self, X):
        n_text = self.n_text_features
        if n_text is None:
            n_text = X.shape[1] // 2
        if not 0 < n_text < X.shape[1]:
            raise ValidationError(
                f"n_text_features={n_text} leaves no visual features in {X.shape[1]} columns")
        x_text = X[:, :n_text]
        x_mm = X if self.multimodal_input == "concat" else X[:, n_text:]
        return x_text, x_mm

    def _init_params(self, X, rng):
        if self.multimodal_input not in ("concat", "visual"):
            raise ValidationError(f"unknown multimodal_input {self.multimodal_input!r}")
        if self.inference_strategy not in INFERENCE_STRATEGIES:
            raise ValidationError(f"unknown inference_strategy {self.inference_strategy!r}")
        x_text, x_mm = self._split(X)
        self.tokens_ = ScoreTokenSet.spaced(self.scale_, self._vocab())
        self.text_encoder_ = BranchEncoder.init(x_text.shape[1], int(self.hidden_dim), self._vocab(), rng)
        self.mm_encoder_ = BranchEncoder.init(x_mm.shape[1], int(self.hidden_dim), self._vocab(), rng)
        self.gate_ = GateParameters.zeros(self.scale_.n_levels)

    def _parameters(self):
        params = {f"text.{k}": v for k, v in self.text_encoder_.params().items()}
        params.update({f"mm.{k}": v for k, v in self.mm_encoder_.params().items()})
        params["gate.w"] = self.gate_.w
        return params

    def _branches(self, X):
        x_text, x_mm = self._split(X)
        vt, cache_t = encode(self.text_encoder_, x_text)
        vm, cache_m = encode(self.mm_encoder_, x_mm)
        return (extract_score_logits(vm, self.tokens_), extract_score_logits(vt, self.tokens_),
                cache_m, cache_t)

    def _forward(self, X):
        z_m, z_t, cache_m, cache_t = self._branches(X)
        z, trace = fuse_forward(z_m, z_t, self.gate_)
        return z, (trace, cache_m, cache_t)

    def _scatter(self, grad_z, encoder):
        out = np.zeros(grad_z.shape[:-1] + (encoder.vocab_size,))
        out[..., list(self.tokens_.token_ids)] = grad_z
        return out

    def _backward(self, cache, grad_z):
        trace, cache_m, cache_t = cache
        g_m, g_t, g_w, g_b = fuse_backward(trace, self.gate_, grad_z)
        grads_m = encode_backward(self.mm_encoder_, cache_m, self._scatter(g_m, self.mm_encoder_))[0]
        grads_t = encode_backward(self.text_encoder_, cache_t, self._scatter(g_t, self.text_encoder_))[0]
        grads = {f"text.{k}": v for k, v in grads_t.items()}
        grads.update({f"mm.{k}": v for k, v in grads_m.items()})
        grads["gate.w"] = g_w
        grads["gate.b"] = g_b
        return grads

    def _step(self, grads, lr):
        super()._step(grads, lr)
        self.gate_.b -= lr * grads["gate.b"]

    def _parameters_finite(self) -> bool:
        return super()._parameters_finite() and np.isfinite(self.gate_.b)

    def branch_logits(self, X) -> dict[str, np.ndarray]:
        """Score logits under every inference strategy."""
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=np.float64)
        z_m, z_t, _, _ = self._branches(X)
        z, _ = fuse_forward(z_m, z_t, self.gate_)
        return {"fused": z, "text_only": z_t, "mm_only": z_m}

    def gate_alpha(self, X) -> np.ndarray:
        """Per-instance weight on the multimodal branch."""
        check_is_fitted(self, "scale_")
        X = check_array(X, dtype=np.float64)
        z_m, z_t, _, _ = self._branches(X)
        return fuse_forward(z_m, z_t, self.gate_)[1].alpha

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "scale_")
        return self.branch_logits(X)[self.inference_strategy]

    def predict_strategies(self, X) -> dict[str, np.ndarray]:
        return {k: self.classes_[np.atleast_1d(decide(z))] for k, z in self.branch_logits(X).items()}


class PoolingHeadClassifier(_DLOMBase):
    """(K+1)-way affine head trained with cross-entropy."""

    def __init__(self, score_min=None, score_max=None, learning_rate=0.05, epochs=200,
                 batch_size=None, beta=0.01, smooth_l1_delta=1.0, random_state=0):
        self.score_min = score_min
        self.score_max = score_max
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.beta = beta
        self.smooth_l1_delta = smooth_l1_delta
        self.random_state = random_state

    def _init_params(self, X, rng):
        self.head_ = PoolingHead.init(X.shape[1], self.scale_.n_levels, rng)

    def _parameters(self):
        return self.head_.params()

    def _forward(self, X):
        return baseline_forward(self.head_, X)

    def _backward(self, cache, grad_z):
        return baseline_backward(self.head_, cache, grad_z)[0]
