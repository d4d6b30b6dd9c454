"""Trait records, JSONL dataset files, synthetic two-modality data and folds.

Dataset files hold one JSON object per line::

    {"instance_id": "e17", "trait_id": "organization", "gold": 4,
     "scale": [1, 6], "x_text": [...], "x_visual": [...]}

``scale`` (inclusive rubric range) and ``x_visual`` are optional. When
``scale`` is absent the caller must supply it or it is inferred from the
observed gold range of the trait.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._validation import ValidationError
from .score_space import ScoreScale, from_external

log = logging.getLogger(__name__)

N_FOLDS = 5
_MASK64 = (1 << 64) - 1


@dataclass
class TraitRecord:
    instance_id: str
    trait_id: str
    x_text: np.ndarray
    gold: int
    scale: ScoreScale
    x_visual: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.instance_id = str(self.instance_id)
        self.trait_id = str(self.trait_id)
        self.x_text = np.asarray(self.x_text, dtype=np.float64)
        if self.x_text.ndim != 1 or self.x_text.size == 0:
            raise ValidationError(f"record {self.key}: x_text must be a non-empty vector")
        if not np.all(np.isfinite(self.x_text)):
            raise ValidationError(f"record {self.key}: x_text has non-finite values")
        if self.x_visual is not None:
            self.x_visual = np.asarray(self.x_visual, dtype=np.float64)
            if self.x_visual.ndim != 1 or not np.all(np.isfinite(self.x_visual)):
                raise ValidationError(f"record {self.key}: x_visual must be a finite vector")
        lo, hi = self.scale.external_range
        if int(self.gold) != self.gold or not lo <= self.gold <= hi:
            raise ValidationError(f"record {self.key}: gold {self.gold} outside {lo}..{hi}")
        self.gold = int(self.gold)

    @property
    def key(self) -> str:
        return f"{self.instance_id}/{self.trait_id}"

    @property
    def level(self) -> int:
        return from_external(self.scale, self.gold)

    def to_json(self) -> dict:
        out = {
            "instance_id": self.instance_id,
            "trait_id": self.trait_id,
            "gold": self.gold,
            "scale": list(self.scale.external_range),
            "x_text": self.x_text.tolist(),
        }
        if self.x_visual is not None:
            out["x_visual"] = self.x_visual.tolist()
        if self.meta:
            out["meta"] = self.meta
        return out


def save_records(records: Iterable[TraitRecord], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")


def _check_uniform_dims(records: Sequence[TraitRecord]) -> None:
    if not records:
        return
    dt = records[0].x_text.size
    has_v = records[0].x_visual is not None
    dv = records[0].x_visual.size if has_v else None
    for rec in records:
        if rec.x_text.size != dt:
            raise ValidationError(f"record {rec.key}: x_text has {rec.x_text.size} dims, expected {dt}")
        if (rec.x_visual is not None) != has_v:
            raise ValidationError(f"record {rec.key}: x_visual present on some records only")
        if has_v and rec.x_visual.size != dv:
            raise ValidationError(f"record {rec.key}: x_visual has {rec.x_visual.size} dims, expected {dv}")


def load_records(path, scales: Mapping[str, ScoreScale] | None = None) -> list[TraitRecord]:
    """Read a JSONL dataset; errors carry the 1-based line number."""
    raw = []
    declared: dict[str, tuple[int, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            missing = {"instance_id", "trait_id", "gold", "x_text"} - obj.keys()
            if missing:
                raise ValidationError(f"{path}:{lineno}: missing keys {sorted(missing)}")
            if "scale" in obj:
                rng = tuple(int(v) for v in obj["scale"])
                prev = declared.setdefault(str(obj["trait_id"]), rng)
                if prev != rng:
                    raise ValidationError(
                        f"{path}:{lineno}: trait {obj['trait_id']} declares scale {rng}, earlier {prev}")
            raw.append((lineno, obj))
    if not raw:
        log.warning("dataset %s is empty", path)
        return []

    resolved: dict[str, ScoreScale] = dict(scales or {})
    for trait, (lo, hi) in declared.items():
        scale = ScoreScale(hi - lo, lo)
        if trait in resolved and resolved[trait] != scale:
            raise ValidationError(f"trait {trait}: file scale {scale} conflicts with supplied {resolved[trait]}")
        resolved[trait] = scale
    for trait in {str(o["trait_id"]) for _, o in raw} - resolved.keys():
        golds = [int(o["gold"]) for _, o in raw if str(o["trait_id"]) == trait]
        log.warning("trait %s has no declared scale; inferring %d..%d from data", trait, min(golds), max(golds))
        resolved[trait] = ScoreScale(max(golds) - min(golds), min(golds))

    records = []
    for lineno, obj in raw:
        try:
            records.append(TraitRecord(
                instance_id=obj["instance_id"], trait_id=obj["trait_id"],
                x_text=obj["x_text"], gold=obj["gold"], scale=resolved[str(obj["trait_id"])],
                x_visual=obj.get("x_visual"), meta=obj.get("meta", {})))
        except (ValidationError, TypeError, ValueError) as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from None
    _check_uniform_dims(records)
    return records


@dataclass(frozen=True)
class SyntheticSpec:
    """Two-modality synthetic data with per-instance visual reliability.

    Each instance draws its visual noise level from ``visual_noise_high`` with
    probability ``rho`` and from ``visual_noise_low`` otherwise. ``text_signal``
    and ``visual_signal`` switch a modality to pure N(0, 1) noise.
    """

    n_instances: int = 500
    scale: ScoreScale = ScoreScale(5)
    feature_dim: int = 16
    text_noise: float = 1.0
    visual_noise_low: float = 0.1
    visual_noise_high: float = 10.0
    rho: float = 0.5
    n_traits: int = 1
    seed: int = 0
    text_signal: bool = True
    visual_signal: bool = True
    with_visual: bool = True

    def __post_init__(self):
        if self.n_instances < 1 or self.feature_dim < 1 or self.n_traits < 1:
            raise ValidationError("n_instances, feature_dim and n_traits must be >= 1")
        if min(self.text_noise, self.visual_noise_low, self.visual_noise_high) < 0:
            raise ValidationError("noise levels must be >= 0")
        if not 0.0 <= self.rho <= 1.0:
            raise ValidationError(f"rho must lie in [0, 1], got {self.rho}")


def generate_synthetic(spec: SyntheticSpec) -> list[TraitRecord]:
    """Features are ``gold_level * direction + noise`` with one fixed unit direction per trait and modality."""
    rng = np.random.default_rng(spec.seed)
    d = spec.feature_dim
    directions = rng.standard_normal((spec.n_traits, 2, d))
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    width = len(str(spec.n_instances - 1))
    records = []
    for i in range(spec.n_instances):
        sigma_v = spec.visual_noise_high if rng.random() < spec.rho else spec.visual_noise_low
        for t in range(spec.n_traits):
            y = int(rng.integers(0, spec.scale.n_levels))
            noise_t = rng.standard_normal(d)
            noise_v = rng.standard_normal(d)
            if spec.text_signal:
                x_text = y * directions[t, 0] + spec.text_noise * noise_t
            else:
                x_text = noise_t
            x_visual = None
            if spec.with_visual:
                x_visual = y * directions[t, 1] + sigma_v * noise_v if spec.visual_signal else noise_v
            records.append(TraitRecord(
                instance_id=f"s{i:0{width}d}", trait_id=f"trait{t}",
                x_text=x_text, gold=y + spec.scale.offset, scale=spec.scale,
                x_visual=x_visual, meta={"visual_sigma": sigma_v} if spec.with_visual else {}))
    return records


def splitmix64(seed: int):
    """SplitMix64 stream of 64-bit unsigned integers."""
    state = seed & _MASK64
    while True:
        state = (state + 0x9E3779B97F4A7C15) & _MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        yield z ^ (z >> 31)


@dataclass(frozen=True)
class FoldPlan:
    fold_assignment: dict[str, int]
    n_folds: int = N_FOLDS
    seed: int = 0

    def fold_of(self, instance_id: str) -> int:
        return self.fold_assignment[instance_id]

    def members(self, fold: int) -> list[str]:
        return sorted(i for i, f in self.fold_assignment.items() if f == fold)

    def sizes(self) -> list[int]:
        return [len(self.members(f)) for f in range(self.n_folds)]

    def to_json(self) -> dict:
        return {"n_folds": self.n_folds, "seed": self.seed,
                "fold_assignment": dict(sorted(self.fold_assignment.items()))}

    @classmethod
    def from_json(cls, obj: dict) -> "FoldPlan":
        return cls({str(k): int(v) for k, v in obj["fold_assignment"].items()},
                   int(obj["n_folds"]), int(obj["seed"]))


def make_folds(ids: Iterable[str], seed: int = 0, n_folds: int = N_FOLDS) -> FoldPlan:
    """Shuffle the sorted unique ids and deal them round-robin into folds.

    The shuffle is Fisher-Yates driven by SplitMix64(seed), drawing the swap
    index for position ``i`` as ``(next * (i + 1)) >> 64``. The result depends
    only on the id set and the seed, never on input order.
    """
    unique = sorted({str(i) for i in ids})
    if len(unique) < n_folds:
        raise ValidationError(f"{len(unique)} instances cannot fill {n_folds} folds")
    stream = splitmix64(seed)
    for i in range(len(unique) - 1, 0, -1):
        j = (next(stream) * (i + 1)) >> 64
        unique[i], unique[j] = unique[j], unique[i]
    return FoldPlan({iid: pos % n_folds for pos, iid in enumerate(unique)}, n_folds, seed)


def group_by_trait(records: Sequence[TraitRecord]) -> dict[str, list[TraitRecord]]:
    out: dict[str, list[TraitRecord]] = {}
    for rec in records:
        out.setdefault(rec.trait_id, []).append(rec)
    return dict(sorted(out.items()))
