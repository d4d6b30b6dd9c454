"""Finite-difference verification of every analytic gradient in the package."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .backbone import (BranchEncoder, PoolingHead, baseline_backward, baseline_forward,
                       encode, encode_backward)
from .fusion import GateParameters, fuse_backward, fuse_forward
from .objectives import (ObjectiveConfig, combined_loss, cross_entropy, expected_score,
                         softmax_stable)

EPS = 1e-5
TOLERANCE = 1e-5

COMPONENTS = ("fusion", "cross_entropy", "expected_score", "combined_loss",
              "encoder", "baseline_head", "end_to_end")


def numeric_gradient(f, x: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Central differences of scalar ``f`` w.r.t. every entry of ``x`` (perturbed in place)."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        hi = f()
        flat[i] = old - eps
        lo = f()
        flat[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return grad


def relative_error(analytic, numeric) -> float:
    """``||a - n|| / max(||a||, ||n||, 1e-8)`` over the whole gradient array."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def _nudge(grad, on: bool):
    if on:
        grad = np.array(grad, dtype=np.float64, copy=True)
        grad.reshape(-1)[0] += 1e-3
    return grad


def _check_fusion(rng, perturb):
    n = int(rng.integers(2, 8))
    z_m, z_t = rng.normal(0, 2, n), rng.normal(0, 2, n)
    params = GateParameters(rng.normal(0, 1, 2 * n), rng.normal())
    g = rng.normal(size=n)
    _, trace = fuse_forward(z_m, z_t, params)
    a_m, a_t, a_w, a_b = fuse_backward(trace, params, g)
    b_arr = np.array([params.b])

    def loss():
        p = GateParameters(params.w, b_arr[0])
        return float(g @ fuse_forward(z_m, z_t, p)[0])

    errs = [relative_error(_nudge(a_m, perturb), numeric_gradient(loss, z_m)),
            relative_error(a_t, numeric_gradient(loss, z_t)),
            relative_error(a_w, numeric_gradient(loss, params.w)),
            relative_error([a_b], numeric_gradient(loss, b_arr))]
    return max(errs)


def _check_cross_entropy(rng, perturb):
    n = int(rng.integers(2, 14))
    z = rng.normal(0, 3, n)
    y = int(rng.integers(0, n))
    grad = cross_entropy(z, y)[1]
    return relative_error(_nudge(grad, perturb), numeric_gradient(lambda: float(cross_entropy(z, y)[0]), z))


def _check_expected_score(rng, perturb):
    n = int(rng.integers(2, 14))
    z = rng.normal(0, 2, n)
    grad = expected_score(softmax_stable(z))[1]
    num = numeric_gradient(lambda: float(expected_score(softmax_stable(z))[0]), z)
    return relative_error(_nudge(grad, perturb), num)


def _check_combined(rng, perturb):
    n = int(rng.integers(3, 14))
    z = rng.normal(0, 2, n)
    y = int(rng.integers(0, n))
    cfg = ObjectiveConfig(lambda_logit=rng.normal(0, 2), beta=rng.uniform(0, 0.5),
                          smooth_l1_delta=rng.uniform(0.2, 2.0), distance_aware=True)
    bundle = combined_loss(z, y, cfg)
    lam = np.array([cfg.lambda_logit])

    def loss():
        cfg.lambda_logit = lam[0]
        return float(combined_loss(z, y, cfg).total)

    err_z = relative_error(_nudge(bundle.grad_z, perturb), numeric_gradient(loss, z))
    err_l = relative_error([bundle.grad_lambda_logit], numeric_gradient(loss, lam))
    return max(err_z, err_l)


def _check_encoder(rng, perturb):
    d, h, v = (int(rng.integers(1, 7)), int(rng.integers(1, 7)), int(rng.integers(2, 13)))
    enc = BranchEncoder(rng.normal(0, 1, (h, d)), rng.normal(0, 1, h),
                        rng.normal(0, 1, (v, h)), rng.normal(0, 1, v))
    x = rng.normal(0, 1, (int(rng.integers(1, 4)), d))
    g = rng.normal(size=(x.shape[0], v))
    _, cache = encode(enc, x)
    grads, grad_x = encode_backward(enc, cache, g)

    def loss():
        return float(np.sum(g * encode(enc, x)[0]))

    errs = [relative_error(_nudge(grads[k], perturb and k == "W1"), numeric_gradient(loss, p))
            for k, p in enc.params().items()]
    errs.append(relative_error(grad_x, numeric_gradient(loss, x)))
    return max(errs)


def _check_head(rng, perturb):
    d, k = int(rng.integers(1, 8)), int(rng.integers(2, 13))
    head = PoolingHead(rng.normal(0, 1, (k, d)), rng.normal(0, 1, k))
    x = rng.normal(0, 1, (int(rng.integers(1, 4)), d))
    g = rng.normal(size=(x.shape[0], k))
    grads, grad_x = baseline_backward(head, baseline_forward(head, x)[1], g)

    def loss():
        return float(np.sum(g * baseline_forward(head, x)[0]))

    errs = [relative_error(_nudge(grads[n], perturb and n == "W_cls"), numeric_gradient(loss, p))
            for n, p in head.params().items()]
    errs.append(relative_error(grad_x, numeric_gradient(loss, x)))
    return max(errs)


def _check_end_to_end(rng, perturb):
    """Total loss of a tiny gated model w.r.t. every trainable array."""
    from .estimators import GatedFusionDLOMClassifier
    from .score_space import ScoreScale

    k_max = int(rng.integers(1, 5))
    d = int(rng.integers(1, 4))
    model = GatedFusionDLOMClassifier(n_text_features=d, hidden_dim=3, vocab_size=2 * (k_max + 1),
                                      distance_aware=True, beta=0.1)
    model.scale_ = ScoreScale(k_max)
    X = rng.normal(0, 1, (3, 2 * d))
    model._init_params(X, rng)
    model.gate_ = GateParameters(rng.normal(0, 1, model.gate_.w.size), rng.normal())
    model.objective_ = ObjectiveConfig(rng.normal(), 0.1, 1.0, True)
    y = rng.integers(0, k_max + 1, 3)

    z, cache = model._forward(X)
    grads = model._backward(cache, combined_loss(z, y, model.objective_).grad_z)
    b_arr = np.array([model.gate_.b])

    def loss():
        model.gate_.b = b_arr[0]
        return float(np.sum(combined_loss(model._forward(X)[0], y, model.objective_).total))

    errs = [relative_error(_nudge(grads[name], perturb and name == "gate.w"), numeric_gradient(loss, p))
            for name, p in model._parameters().items()]
    errs.append(relative_error([grads["gate.b"]], numeric_gradient(loss, b_arr)))
    return max(errs)


_CHECKS = {
    "fusion": _check_fusion,
    "cross_entropy": _check_cross_entropy,
    "expected_score": _check_expected_score,
    "combined_loss": _check_combined,
    "encoder": _check_encoder,
    "baseline_head": _check_head,
    "end_to_end": _check_end_to_end,
}


@dataclass
class GradcheckResult:
    max_rel_error: dict[str, float]
    trials: int
    tolerance: float = TOLERANCE

    @property
    def failed(self) -> list[str]:
        return [c for c, e in self.max_rel_error.items() if not e < self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failed

    def to_json(self) -> dict:
        return {"trials": self.trials, "tolerance": self.tolerance, "epsilon": EPS,
                "passed": self.passed, "failed": self.failed,
                "max_rel_error": self.max_rel_error}


def run_gradcheck(seed: int = 0, trials: int = 200, perturb: str | None = None,
                  components=COMPONENTS) -> GradcheckResult:
    """Run ``trials`` random configurations per component.

    ``perturb`` names a component whose analytic gradient is deliberately
    corrupted, as a negative control.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if perturb is not None and perturb not in _CHECKS:
        raise ValueError(f"unknown component {perturb!r}")
    worst = {}
    for offset, name in enumerate(components):
        rng = np.random.default_rng([seed, offset])
        worst[name] = max(_CHECKS[name](rng, perturb == name) for _ in range(trials))
    return GradcheckResult(worst, trials)
