import json
import random

import numpy as np
import pytest
from click.testing import CliRunner

from dlom import SyntheticSpec, ValidationError, generate_synthetic, save_records
from dlom.cli import main
from dlom.estimators import DLOMClassifier, TrainingDivergence
from dlom.harness import RunConfig, cmd_crossval, cmd_report, cmd_train
from dlom.metrics import macro_average

SMALL = dict(n_instances=40, k_max=3, feature_dim=4, n_traits=2, seed=1)


@pytest.fixture
def small_file(tmp_path):
    path = tmp_path / "data.jsonl"
    save_records(generate_synthetic(SyntheticSpec(
        n_instances=40, feature_dim=4, n_traits=2, seed=1)), path)
    return path


def test_config_invariants():
    with pytest.raises(ValidationError):
        RunConfig(epochs=0, synthetic=SMALL)
    with pytest.raises(ValidationError):
        RunConfig(mode="nope", synthetic=SMALL)
    with pytest.raises(ValidationError):
        RunConfig(mode="dlom", inference_strategy="text_only", synthetic=SMALL)
    with pytest.raises(ValidationError):
        RunConfig()
    assert RunConfig(mode="dlom_da", synthetic=SMALL).uses_distance
    assert not RunConfig(mode="dlom", synthetic=SMALL).uses_distance


def test_gf_needs_visual(tmp_path):
    cfg = RunConfig(mode="dlom_gf", epochs=1, synthetic=dict(SMALL, with_visual=False))
    with pytest.raises(ValidationError, match="x_visual"):
        cmd_train(cfg, tmp_path / "r")


def test_config_file_with_overrides(tmp_path):
    path = tmp_path / "cfg.yaml"
    path.write_text("mode: dlom_da\nepochs: 7\nsynthetic:\n  n_instances: 20\n  k_max: 2\n")
    cfg = RunConfig.from_file(path, epochs=3, seed=None)
    assert (cfg.mode, cfg.epochs, cfg.seed, cfg.synthetic["k_max"]) == ("dlom_da", 3, 0, 2)
    path.write_text("bogus: 1\n")
    with pytest.raises(ValidationError):
        RunConfig.from_file(path)


def test_train_writes_checkpoints_and_runs_exact_epochs(tmp_path):
    cfg = RunConfig(mode="dlom_da", epochs=4, synthetic=SMALL)
    report = cmd_train(cfg, tmp_path / "run")
    assert sorted(p.name for p in (tmp_path / "run" / "checkpoints").iterdir()) == \
        ["trait0.ckpt", "trait1.ckpt"]
    hist = report["folds"][0]["per_trait"]["trait0"]["lambda_history"]
    assert len(hist) == 4 and all(0 < v < 1 for v in hist)


def test_crossval_mean_is_fold_average(tmp_path):
    cfg = RunConfig(mode="dlom", epochs=5, synthetic=SMALL)
    report = cmd_crossval(cfg, tmp_path / "cv")
    assert len(report["folds"]) == 5
    for trait in ("trait0", "trait1"):
        vals = [f["per_trait"][trait]["strategies"]["decision"]["qwk"] for f in report["folds"]]
        vals = [v for v in vals if v is not None]
        summary = report["summary"]["strategies"]["decision"]["per_trait"][trait]["qwk"]
        assert summary["mean"] == pytest.approx(sum(vals) / len(vals), abs=1e-15)
        assert summary["std"] == pytest.approx(float(np.std(vals, ddof=1)), abs=1e-15)
    folds = json.loads((tmp_path / "cv" / "folds.json").read_text())
    assert len(folds["fold_assignment"]) == 40


def test_crossval_independent_of_record_order(tmp_path):
    recs = generate_synthetic(SyntheticSpec(n_instances=30, feature_dim=4, n_traits=2, seed=2))
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    save_records(recs, a)
    shuffled = list(recs)
    random.Random(0).shuffle(shuffled)
    save_records(shuffled, b)
    ra = cmd_crossval(RunConfig(epochs=5, data=str(a), fold_seed=3), tmp_path / "ra")
    rb = cmd_crossval(RunConfig(epochs=5, data=str(b), fold_seed=3), tmp_path / "rb")
    assert ra["folds"] == rb["folds"] and ra["summary"] == rb["summary"]


def test_crossval_independent_of_scheduling(tmp_path):
    cfg = RunConfig(mode="dlom_gf", epochs=5, synthetic=SMALL)
    cmd_crossval(cfg, tmp_path / "serial", n_jobs=1)
    cmd_crossval(cfg, tmp_path / "parallel", n_jobs=2)
    for name in ("report.json", "folds.json", "config.json"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()


def test_gated_report_has_all_strategies_and_alpha(tmp_path):
    report = cmd_crossval(RunConfig(mode="dlom_gf", epochs=5, synthetic=SMALL), tmp_path / "gf")
    assert set(report["summary"]["strategies"]) == {"fused", "text_only", "mm_only"}
    assert 0 < report["summary"]["alpha_mean"] < 1


def test_divergence_reports_epoch_and_instance():
    X = np.array([[1e200, -1e200], [1.0, 2.0]] * 5)
    y = np.array([0, 1] * 5)
    with pytest.raises(TrainingDivergence, match=r"epoch \d+, instance e\d"), \
            np.errstate(all="ignore"):
        DLOMClassifier(epochs=50, learning_rate=float("inf")).fit(X, y, instance_ids=[f"e{i}" for i in range(10)])


def test_report_grid(tmp_path):
    cmd_crossval(RunConfig(mode="dlom", epochs=3, synthetic=SMALL, name="A"), tmp_path / "a")
    cmd_crossval(RunConfig(mode="dlom_gf", epochs=3, synthetic=SMALL), tmp_path / "b")
    res = cmd_report([tmp_path / "a", tmp_path / "b"], tmp_path / "rep")
    tsv = (tmp_path / "rep" / "traits.tsv").read_text().splitlines()
    assert tsv[0].split("\t") == ["model", "trait0", "trait1", "Avg"]
    assert [line.split("\t")[0] for line in tsv[1:]] == \
        ["A", "dlom_gf[fused]", "dlom_gf[mm_only]", "dlom_gf[text_only]"]
    for name, row in res["traits"]["rows"].items():
        vals = {k: v for k, v in row["values"].items() if v is not None}
        assert row["Avg"] == macro_average(vals)
    first = (tmp_path / "rep" / "report.json").read_bytes()
    cmd_report([tmp_path / "a", tmp_path / "b"], tmp_path / "rep")
    assert (tmp_path / "rep" / "report.json").read_bytes() == first


def test_report_single_cell_and_prompt_grid(tmp_path):
    recs = generate_synthetic(SyntheticSpec(n_instances=25, feature_dim=3, seed=0))
    for r in recs:
        r.trait_id = "P1:content"
    path = tmp_path / "d.jsonl"
    save_records(recs, path)
    cmd_crossval(RunConfig(epochs=3, data=str(path)), tmp_path / "r")
    res = cmd_report([tmp_path / "r"], tmp_path / "rep")
    lines = (tmp_path / "rep" / "traits.tsv").read_text().splitlines()
    assert len(lines) == 2 and len(lines[1].split("\t")) == 3
    assert res["prompts"]["columns"] == ["P1"]


def test_report_missing_runs(tmp_path):
    with pytest.raises(FileNotFoundError, match="nowhere"):
        cmd_report([tmp_path / "nowhere"], tmp_path / "rep")


def test_distance_flag_off_matches_dlom(tmp_path):
    cmd_train(RunConfig(mode="dlom", epochs=6, synthetic=SMALL), tmp_path / "a")
    cmd_train(RunConfig(mode="dlom_da", distance_aware=False, epochs=6, synthetic=SMALL), tmp_path / "b")
    for name in ("trait0.ckpt", "trait1.ckpt"):
        assert (tmp_path / "a" / "checkpoints" / name).read_bytes() == \
            (tmp_path / "b" / "checkpoints" / name).read_bytes()


# -- CLI


def test_cli_synth_deterministic(tmp_path):
    runner = CliRunner()
    for name in ("a.jsonl", "b.jsonl"):
        res = runner.invoke(main, ["synth", "--out", str(tmp_path / name), "--n-instances", "20",
                                   "--seed", "4", "--k-max", "10", "--offset", "2"])
        assert res.exit_code == 0, res.output
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()


def test_cli_train_crossval_report(tmp_path, small_file):
    runner = CliRunner()
    res = runner.invoke(main, ["train", "--data", str(small_file), "--epochs", "3",
                               "--out", str(tmp_path / "t")])
    assert res.exit_code == 0, res.output
    res = runner.invoke(main, ["crossval", "--data", str(small_file), "--mode", "dlom_gf",
                               "--epochs", "3", "--out", str(tmp_path / "cv")])
    assert res.exit_code == 0, res.output
    assert "fold 4 trait1" in res.output
    res = runner.invoke(main, ["report", str(tmp_path / "t"), str(tmp_path / "cv"),
                               "--out", str(tmp_path / "rep")])
    assert res.exit_code == 0, res.output
    assert res.output.startswith("model\ttrait0\ttrait1\tAvg")


def test_cli_config_file(tmp_path, small_file):
    cfg = tmp_path / "run.yaml"
    cfg.write_text(f"mode: baseline_cls\nepochs: 50\ndata: {small_file}\n")
    res = CliRunner().invoke(main, ["train", "--config", str(cfg), "--epochs", "2",
                                    "--out", str(tmp_path / "o")])
    assert res.exit_code == 0, res.output
    saved = json.loads((tmp_path / "o" / "config.json").read_text())
    assert saved["epochs"] == 2 and saved["mode"] == "baseline_cls"


def test_cli_rejects_zero_epochs(tmp_path, small_file):
    res = CliRunner().invoke(main, ["train", "--data", str(small_file), "--epochs", "0",
                                    "--out", str(tmp_path / "o")])
    assert res.exit_code != 0 and "epochs" in res.output


def test_cli_gradcheck(tmp_path):
    runner = CliRunner()
    res = runner.invoke(main, ["gradcheck", "--trials", "1", "--out", str(tmp_path / "g.json")])
    assert res.exit_code == 0, res.output
    assert json.loads((tmp_path / "g.json").read_text())["passed"]
    res = runner.invoke(main, ["gradcheck", "--trials", "1", "--perturb", "fusion"])
    assert res.exit_code == 1
    assert "FAIL fusion" in res.output


def test_cli_report_missing(tmp_path):
    res = CliRunner().invoke(main, ["report", str(tmp_path / "x"), "--out", str(tmp_path / "r")])
    assert res.exit_code == 1
