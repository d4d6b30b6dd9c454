"""Training, cross-validation and reporting runs.

A run directory holds ``report.json`` (deterministic given config and seed),
``timing.json`` (wall-clock, excluded from determinism), ``config.json`` and,
depending on the command, ``folds.json`` and ``checkpoints/``.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml
from joblib import Parallel, delayed

from ._validation import ValidationError
from .checkpoint import save_checkpoint
from .dataset import (SyntheticSpec, TraitRecord, generate_synthetic, group_by_trait,
                      load_records, make_folds)
from .estimators import (INFERENCE_STRATEGIES, DLOMClassifier, GatedFusionDLOMClassifier,
                         PoolingHeadClassifier)
from .metrics import macro_average, mean_absolute_error, qwk
from .score_space import ScoreScale

log = logging.getLogger(__name__)

MODES = ("dlom", "dlom_gf", "dlom_da", "baseline_cls")


@dataclass
class RunConfig:
    mode: str = "dlom"
    epochs: int = 200
    learning_rate: float = 0.05
    batch_size: int | None = None
    hidden_dim: int = 32
    vocab_size: int | None = None
    seed: int = 0
    fold_seed: int | None = None
    beta: float = 0.01
    smooth_l1_delta: float = 1.0
    # None means "follow the mode": on for dlom_da, off otherwise.
    distance_aware: bool | None = None
    inference_strategy: str = "fused"
    multimodal_input: str = "visual"
    data: str | None = None
    synthetic: dict | None = None
    name: str | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if int(self.epochs) < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if self.inference_strategy not in INFERENCE_STRATEGIES:
            raise ValidationError(f"inference_strategy must be one of {INFERENCE_STRATEGIES}")
        if self.inference_strategy != "fused" and self.mode != "dlom_gf":
            raise ValidationError("text_only / mm_only inference needs mode dlom_gf")
        if (self.data is None) == (self.synthetic is None):
            raise ValidationError("give exactly one of a dataset path or a synthetic spec")

    @property
    def uses_distance(self) -> bool:
        return self.mode == "dlom_da" if self.distance_aware is None else bool(self.distance_aware)

    @property
    def label(self) -> str:
        return self.name or self.mode

    @classmethod
    def from_file(cls, path, **overrides) -> "RunConfig":
        with open(path, encoding="utf-8") as fh:
            raw = yaml.safe_load(fh) or {}
        unknown = set(raw) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        raw.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**raw)

    def to_json(self) -> dict:
        out = dataclasses.asdict(self)
        out["distance_aware"] = self.uses_distance
        return out


def synthetic_spec(raw: dict) -> SyntheticSpec:
    raw = dict(raw)
    k_max = raw.pop("k_max", 5)
    offset = raw.pop("offset", 0)
    return SyntheticSpec(scale=ScoreScale(k_max, offset), **raw)


def load_data(cfg: RunConfig) -> list[TraitRecord]:
    records = load_records(cfg.data) if cfg.data else generate_synthetic(synthetic_spec(cfg.synthetic))
    if not records:
        raise ValidationError("dataset has no records")
    if cfg.mode == "dlom_gf" and any(r.x_visual is None for r in records):
        raise ValidationError("mode dlom_gf needs x_visual on every record")
    return records


def build_estimator(cfg: RunConfig, scale: ScoreScale, n_text: int):
    lo, hi = scale.external_range
    common = dict(score_min=lo, score_max=hi, learning_rate=cfg.learning_rate,
                  epochs=cfg.epochs, batch_size=cfg.batch_size, beta=cfg.beta,
                  smooth_l1_delta=cfg.smooth_l1_delta, random_state=cfg.seed)
    if cfg.mode == "baseline_cls":
        return PoolingHeadClassifier(**common)
    common.update(hidden_dim=cfg.hidden_dim, vocab_size=cfg.vocab_size,
                  distance_aware=cfg.uses_distance)
    if cfg.mode == "dlom_gf":
        return GatedFusionDLOMClassifier(n_text_features=n_text, multimodal_input=cfg.multimodal_input,
                                         inference_strategy=cfg.inference_strategy, **common)
    return DLOMClassifier(**common)


def design_matrix(records: Sequence[TraitRecord], mode: str) -> np.ndarray:
    if mode == "dlom_gf":
        return np.array([np.concatenate([r.x_text, r.x_visual]) for r in records])
    return np.array([r.x_text for r in records])


def evaluate(est, records: Sequence[TraitRecord], mode: str) -> dict:
    """Held-out metrics for one trait; gated models get one entry per inference strategy."""
    X = design_matrix(records, mode)
    gold = np.array([r.gold for r in records])
    scale = records[0].scale
    if mode == "dlom_gf":
        preds = est.predict_strategies(X)
    else:
        preds = {"decision": est.predict(X)}
    out = {"n": len(records), "strategies": {}}
    for name, p in preds.items():
        out["strategies"][name] = {
            "qwk": qwk(p - scale.offset, gold - scale.offset, scale),
            "mae": mean_absolute_error(p, gold),
            "far_error_rate": float(np.mean(np.abs(p - gold) >= 2)),
        }
    if mode == "dlom_gf":
        alpha = est.gate_alpha(X)
        out["alpha"] = {"mean": float(alpha.mean()), "min": float(alpha.min()),
                        "max": float(alpha.max())}
    if getattr(est, "objective_", None) is not None and est.objective_.distance_aware:
        out["lambda"] = est.objective_.lambda_value
    return out


def primary_strategy(cfg: RunConfig) -> str:
    return cfg.inference_strategy if cfg.mode == "dlom_gf" else "decision"


def _fit(cfg: RunConfig, records: Sequence[TraitRecord]):
    X = design_matrix(records, cfg.mode)
    y = np.array([r.gold for r in records])
    est = build_estimator(cfg, records[0].scale, records[0].x_text.size)
    return est.fit(X, y, instance_ids=[r.instance_id for r in records])


def summarize(folds: list[dict], primary: str) -> dict:
    """Across-fold mean and sample standard deviation per strategy, trait and metric."""
    traits = sorted({t for f in folds for t in f["per_trait"]})
    strategies = sorted({s for f in folds for t in f["per_trait"].values() for s in t["strategies"]})
    summary: dict = {"primary": primary, "strategies": {}}
    for s in strategies:
        per_trait = {}
        for t in traits:
            entry = {}
            for metric in ("qwk", "mae", "far_error_rate"):
                vals = [f["per_trait"][t]["strategies"][s][metric] for f in folds
                        if t in f["per_trait"] and f["per_trait"][t]["strategies"][s][metric] is not None]
                entry[metric] = {
                    "mean": float(np.mean(vals)) if vals else None,
                    "std": float(np.std(vals, ddof=1)) if len(vals) > 1 else 0.0,
                    "n_folds": len(vals),
                }
            per_trait[t] = entry
        qwk_means = {t: e["qwk"]["mean"] for t, e in per_trait.items()}
        try:
            macro = macro_average(qwk_means)
        except ValidationError:
            macro = None
        summary["strategies"][s] = {"per_trait": per_trait, "macro_avg_qwk": macro,
                                    "degenerate_traits": sorted(t for t, v in qwk_means.items() if v is None)}
    alphas = [f["per_trait"][t]["alpha"]["mean"] for f in folds for t in f["per_trait"]
              if "alpha" in f["per_trait"][t]]
    if alphas:
        summary["alpha_mean"] = float(np.mean(alphas))
    return summary


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _safe_name(trait: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.-]", "_", trait)


def cmd_train(cfg: RunConfig, out_dir) -> dict:
    """Fit one model per trait on all records; report training-split metrics."""
    out = Path(out_dir)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    records = load_data(cfg)
    per_trait = {}
    for trait, recs in group_by_trait(records).items():
        est = _fit(cfg, recs)
        save_checkpoint(est, out / "checkpoints" / f"{_safe_name(trait)}.ckpt")
        per_trait[trait] = evaluate(est, recs, cfg.mode)
        if cfg.uses_distance:
            per_trait[trait]["lambda_history"] = est.lambda_history_
    folds = [{"fold": "train", "per_trait": per_trait}]
    report = {"command": "train", "config": cfg.to_json(), "folds": folds,
              "summary": summarize(folds, primary_strategy(cfg))}
    _write_json(out / "config.json", cfg.to_json())
    _write_json(out / "report.json", report)
    _write_json(out / "timing.json", {"wall_clock_s": time.perf_counter() - start})
    return report


def _run_fold(cfg: RunConfig, by_trait: dict, assignment: dict, fold: int) -> dict:
    per_trait = {}
    for trait, recs in by_trait.items():
        train = [r for r in recs if assignment[r.instance_id] != fold]
        test = [r for r in recs if assignment[r.instance_id] == fold]
        if not train or not test:
            raise ValidationError(f"fold {fold} leaves trait {trait} without train or test records")
        per_trait[trait] = evaluate(_fit(cfg, train), test, cfg.mode)
    return {"fold": fold, "per_trait": per_trait}


def cmd_crossval(cfg: RunConfig, out_dir, n_jobs: int = 1) -> dict:
    """Essay-level five-fold cross-validation with fresh models per fold."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    records = load_data(cfg)
    ids = {r.instance_id for r in records}
    if len(ids) < 5:
        raise ValidationError(f"cross-validation needs >= 5 instances, got {len(ids)}")
    plan = make_folds(ids, cfg.seed if cfg.fold_seed is None else cfg.fold_seed)
    by_trait = {t: sorted(rs, key=lambda r: r.instance_id) for t, rs in group_by_trait(records).items()}
    folds = Parallel(n_jobs=n_jobs)(
        delayed(_run_fold)(cfg, by_trait, plan.fold_assignment, f) for f in range(plan.n_folds))
    folds = sorted(folds, key=lambda f: f["fold"])
    report = {"command": "crossval", "config": cfg.to_json(), "folds": folds,
              "summary": summarize(folds, primary_strategy(cfg))}
    _write_json(out / "config.json", cfg.to_json())
    _write_json(out / "folds.json", plan.to_json())
    _write_json(out / "report.json", report)
    _write_json(out / "timing.json", {"wall_clock_s": time.perf_counter() - start})
    return report


def _rows(report: dict, label: str) -> dict[str, dict[str, float | None]]:
    strategies = report["summary"]["strategies"]
    rows = {}
    for s, body in strategies.items():
        name = label if len(strategies) == 1 else f"{label}[{s}]"
        rows[name] = {t: e["qwk"]["mean"] for t, e in body["per_trait"].items()}
    return rows


def _fmt(v) -> str:
    return "NA" if v is None else f"{v:.3f}"


def _grid_tsv(rows: dict, columns: list[str]) -> str:
    lines = ["\t".join(["model", *columns, "Avg"])]
    for name, vals in rows.items():
        present = {c: vals.get(c) for c in columns}
        try:
            avg = macro_average({c: v for c, v in present.items() if v is not None})
        except ValidationError:
            avg = None
        lines.append("\t".join([name, *(_fmt(present[c]) for c in columns), _fmt(avg)]))
    return "\n".join(lines) + "\n"


def _grid_json(rows: dict, columns: list[str]) -> dict:
    out = {}
    for name, vals in rows.items():
        present = {c: vals.get(c) for c in columns if vals.get(c) is not None}
        try:
            avg = macro_average(present)
        except ValidationError:
            avg = None
        out[name] = {"values": {c: vals.get(c) for c in columns}, "Avg": avg}
    return {"columns": columns, "rows": out}


def cmd_report(run_dirs: Sequence, out_dir) -> dict:
    """Trait-by-model QWK grid over completed runs, as TSV and JSON.

    Trait ids of the form ``prompt:trait`` also yield a prompt-by-model grid
    whose cells are macro averages over that prompt's traits.
    """
    missing = [str(d) for d in run_dirs if not (Path(d) / "report.json").is_file()]
    if missing:
        raise FileNotFoundError(f"no report.json in: {', '.join(missing)}")
    if not run_dirs:
        raise ValidationError("need at least one run directory")
    rows: dict = {}
    for d in run_dirs:
        report = json.loads((Path(d) / "report.json").read_text(encoding="utf-8"))
        label = report["config"].get("name") or report["config"]["mode"]
        for name, vals in _rows(report, label).items():
            if name in rows:
                name = f"{name}@{Path(d).name}"
            rows[name] = vals
    traits = sorted({t for vals in rows.values() for t in vals})
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "traits.tsv").write_text(_grid_tsv(rows, traits), encoding="utf-8")
    result = {"traits": _grid_json(rows, traits)}
    if traits and all(":" in t for t in traits):
        prompts = sorted({t.split(":", 1)[0] for t in traits})
        prompt_rows = {}
        for name, vals in rows.items():
            prompt_rows[name] = {}
            for p in prompts:
                cell = {t: v for t, v in vals.items() if t.split(":", 1)[0] == p and v is not None}
                prompt_rows[name][p] = macro_average(cell) if cell else None
        (out / "prompts.tsv").write_text(_grid_tsv(prompt_rows, prompts), encoding="utf-8")
        result["prompts"] = _grid_json(prompt_rows, prompts)
    _write_json(out / "report.json", result)
    return result
