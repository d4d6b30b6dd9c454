"""Quadratic Weighted Kappa and macro averaging over traits."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ._validation import ValidationError, check_levels
from .score_space import ScoreScale


def confusion_matrix(golds, preds, scale: ScoreScale) -> np.ndarray:
    """Counts with rows indexed by gold level and columns by predicted level."""
    golds = check_levels(golds, scale.k_max, "golds")
    preds = check_levels(preds, scale.k_max, "preds")
    if golds.shape != preds.shape or golds.ndim != 1:
        raise ValidationError(f"preds and golds must be 1-d of equal length, got {preds.shape} and {golds.shape}")
    if golds.size == 0:
        raise ValidationError("QWK needs at least one pair")
    n = scale.n_levels
    counts = np.zeros((n, n), dtype=np.int64)
    np.add.at(counts, (golds, preds), 1)
    return counts


def quadratic_weights(n_levels: int, denominator: float | None = None) -> np.ndarray:
    """``(i - j)**2 / denominator``; the default denominator is ``k_max**2``.

    Any positive constant gives the same kappa, since it cancels in the ratio.
    """
    if denominator is None:
        denominator = float((n_levels - 1) ** 2)
    if not denominator > 0:
        raise ValidationError(f"weight denominator must be positive, got {denominator}")
    idx = np.arange(n_levels, dtype=np.float64)
    return (idx[:, None] - idx[None, :]) ** 2 / denominator


def qwk(preds, golds, scale: ScoreScale, weight_denominator: float | None = None) -> float | None:
    """Quadratic Weighted Kappa on internal levels.

    Returns ``None`` when the expected weighted disagreement is zero (all mass in
    one row or one column), where kappa is undefined.
    """
    observed = confusion_matrix(golds, preds, scale).astype(np.float64)
    n = observed.sum()
    expected = np.outer(observed.sum(axis=1), observed.sum(axis=0)) / n
    w = quadratic_weights(scale.n_levels, weight_denominator)
    denom = float(np.sum(w * expected))
    if denom == 0.0:
        return None
    return 1.0 - float(np.sum(w * observed)) / denom


def mean_absolute_error(preds, golds) -> float:
    return float(np.mean(np.abs(np.asarray(preds) - np.asarray(golds))))


def macro_average(per_trait: Mapping[str, float | None]) -> float:
    """Unweighted mean over traits, skipping degenerate (``None``) ones."""
    values = [v for v in per_trait.values() if v is not None]
    if not values:
        raise ValidationError("every trait is degenerate; macro average undefined")
    return float(np.mean(values))


@dataclass
class QwkReport:
    per_trait: dict[str, float | None]
    degenerate: list[str] = field(init=False)
    macro_avg: float = field(init=False)

    def __post_init__(self):
        self.degenerate = sorted(t for t, v in self.per_trait.items() if v is None)
        self.macro_avg = macro_average(self.per_trait)
