"""Command-line entry point: ``dlom synth|train|crossval|gradcheck|report``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from ._validation import ValidationError
from .dataset import SyntheticSpec, generate_synthetic, save_records
from .estimators import INFERENCE_STRATEGIES, TrainingDivergence
from .gradcheck import COMPONENTS, run_gradcheck
from .harness import MODES, RunConfig, cmd_crossval, cmd_report, cmd_train
from .score_space import ScoreScale


def _run_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="YAML file with RunConfig fields; flags override it."),
        click.option("--data", type=click.Path(exists=True, dir_okay=False),
                     help="JSONL dataset file."),
        click.option("--mode", type=click.Choice(MODES)),
        click.option("--epochs", type=int),
        click.option("--learning-rate", type=float),
        click.option("--batch-size", type=int),
        click.option("--hidden-dim", type=int),
        click.option("--vocab-size", type=int),
        click.option("--seed", type=int),
        click.option("--fold-seed", type=int),
        click.option("--beta", type=float),
        click.option("--smooth-l1-delta", type=float),
        click.option("--distance-aware/--no-distance-aware", default=None),
        click.option("--inference-strategy", type=click.Choice(INFERENCE_STRATEGIES)),
        click.option("--multimodal-input", type=click.Choice(["visual", "concat"])),
        click.option("--name", help="Row label used by `report`."),
        click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False)),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _config(config_path, **overrides) -> RunConfig:
    if config_path:
        return RunConfig.from_file(config_path, **overrides)
    return RunConfig(**{k: v for k, v in overrides.items() if v is not None})


def _fail(exc: Exception) -> None:
    click.echo(f"error: {exc}", err=True)
    sys.exit(1)


@click.group()
@click.option("-v", "--verbose", is_flag=True)
def main(verbose):
    """Decision-level ordinal scoring models: training, evaluation and checks."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@click.option("--n-instances", default=500, show_default=True)
@click.option("--k-max", default=5, show_default=True)
@click.option("--offset", default=0, show_default=True)
@click.option("--feature-dim", default=16, show_default=True)
@click.option("--text-noise", default=1.0, show_default=True)
@click.option("--visual-noise-low", default=0.1, show_default=True)
@click.option("--visual-noise-high", default=10.0, show_default=True)
@click.option("--rho", default=0.5, show_default=True, help="Probability of the high visual noise level.")
@click.option("--n-traits", default=1, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--text-signal/--no-text-signal", default=True)
@click.option("--visual-signal/--no-visual-signal", default=True)
@click.option("--with-visual/--no-visual", default=True)
def synth(out, k_max, offset, **kw):
    """Write a synthetic two-modality dataset as JSONL."""
    try:
        records = generate_synthetic(SyntheticSpec(scale=ScoreScale(k_max, offset), **kw))
    except ValidationError as exc:
        _fail(exc)
    save_records(records, out)
    click.echo(f"wrote {len(records)} records to {out}")


@main.command()
@_run_options
def train(config_path, out_dir, **overrides):
    """Train one model per trait on the full dataset."""
    try:
        report = cmd_train(_config(config_path, **overrides), out_dir)
    except (ValidationError, TrainingDivergence, FileNotFoundError) as exc:
        _fail(exc)
    summary = report["summary"]
    click.echo(f"train macro QWK ({summary['primary']}): "
               f"{summary['strategies'][summary['primary']]['macro_avg_qwk']}")


@main.command()
@_run_options
@click.option("--jobs", default=1, show_default=True, help="Folds trained in parallel.")
def crossval(config_path, out_dir, jobs, **overrides):
    """Five-fold essay-level cross-validation."""
    try:
        report = cmd_crossval(_config(config_path, **overrides), out_dir, n_jobs=jobs)
    except (ValidationError, TrainingDivergence, FileNotFoundError) as exc:
        _fail(exc)
    for fold in report["folds"]:
        for trait, entry in fold["per_trait"].items():
            vals = " ".join(f"{s}={v['qwk']:.3f}" if v["qwk"] is not None else f"{s}=NA"
                            for s, v in entry["strategies"].items())
            click.echo(f"fold {fold['fold']} {trait}: {vals}")
    for s, body in report["summary"]["strategies"].items():
        click.echo(f"mean macro QWK [{s}]: {body['macro_avg_qwk']}")


@main.command()
@click.option("--seed", default=0, show_default=True)
@click.option("--trials", default=200, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), help="Write the result as JSON.")
@click.option("--perturb", type=click.Choice(COMPONENTS), hidden=True,
              help="Corrupt one analytic gradient (negative control).")
def gradcheck(seed, trials, out, perturb):
    """Compare analytic gradients with central finite differences."""
    if trials < 1:
        _fail(ValueError("trials must be >= 1"))
    result = run_gradcheck(seed=seed, trials=trials, perturb=perturb)
    for name, err in result.max_rel_error.items():
        status = "PASS" if err < result.tolerance else "FAIL"
        click.echo(f"{status} {name}: max relative error {err:.3e}")
    if out:
        Path(out).write_text(json.dumps(result.to_json(), indent=2, sort_keys=True) + "\n")
    if not result.passed:
        click.echo(f"gradient check failed: {', '.join(result.failed)}", err=True)
        sys.exit(1)


@main.command()
@click.argument("run_dirs", nargs=-1, required=True, type=click.Path(file_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
def report(run_dirs, out_dir):
    """Tabulate mean QWK per trait and model over finished runs."""
    try:
        cmd_report(run_dirs, out_dir)
    except (FileNotFoundError, ValidationError) as exc:
        _fail(exc)
    click.echo((Path(out_dir) / "traits.tsv").read_text(), nl=False)


if __name__ == "__main__":
    main()
