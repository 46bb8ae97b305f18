import json
import math

import numpy as np
import pytest

from radarcal.classifier import TrainConfig
from radarcal.corruptions import CorruptionSpec
from radarcal.dataset import DatasetConfig, generate_dataset
from radarcal.experiment import (
    ConfigError,
    EvaluationConfig,
    ExperimentConfig,
    config_from_dict,
    corrupt_split,
    default_dataset_config,
    load_config,
    mean_std,
    run_experiment,
)
from radarcal.report import render_table, write_report_files
from radarcal.smoothing import SmoothingPolicy
from radarcal.synth import default_physics


def small_config(**overrides):
    cfg = ExperimentConfig(
        dataset=DatasetConfig(split_sizes={"train": 300, "val": 100, "test": 200},
                              test_shift={"noise_floor": 2.0}),
        policies=[SmoothingPolicy("hard"), SmoothingPolicy("power", alpha=0.5)],
        train=TrainConfig(epochs=2, hidden_dims=(16,)),
        n_seeds=3,
        evaluation=EvaluationConfig(range_edges=(10.0, 25.0, 40.0), min_range_support=5),
    )
    for k, v in overrides.items():
        setattr(cfg, k, v)
    return cfg


@pytest.fixture(scope="module")
def small_run():
    return run_experiment(small_config())


def test_mean_std():
    assert mean_std([1.0, 2.0, 3.0]) == {"mean": 2.0, "std": 1.0, "n": 3}
    assert mean_std([5.0]) == {"mean": 5.0, "std": 0.0, "n": 1}
    assert mean_std([None, float("nan")]) == {"mean": None, "std": None, "n": 0}


def test_aggregate_recomputable(small_run):
    for entry in small_run.aggregate["policies"]:
        per_seed = entry["per_seed"]
        assert len(per_seed) == 3
        for m in ("accuracy", "ece", "mmc_all"):
            vals = np.array([r[m] for r in per_seed])
            assert abs(entry["summary"][m]["mean"] - vals.mean()) <= 1e-12
            assert abs(entry["summary"][m]["std"] - vals.std(ddof=1)) <= 1e-12


def test_runs_paired_across_policies(small_run):
    seeds = [[r["seed"] for r in e["per_seed"]] for e in small_run.aggregate["policies"]]
    assert seeds[0] == seeds[1] and len(set(seeds[0])) == 3


def test_corruption_structure(small_run):
    for entry in small_run.aggregate["policies"]:
        assert [r["severity"] for r in entry["corruption_by_severity"]] == [1, 2, 3]
        assert len(entry["corruption_cells"]) == 21
        row = entry["corruption_by_severity"][0]
        # kind-average per seed, then mean over seeds
        assert row["ece"]["mean"] == pytest.approx(np.mean(row["ece"]["per_seed"]), abs=1e-12)


def test_range_bins_and_reliability(small_run):
    entry = small_run.aggregate["policies"][0]
    assert [(r["lo"], r["hi"]) for r in entry["range_bins"]] == [
        (None, 10.0), (10.0, 25.0), (25.0, 40.0), (40.0, None)]
    assert sum(b["count"] for b in entry["reliability_bins"]) == 3 * 200
    json.dumps(small_run.aggregate)  # serializable without custom encoders


def test_experiment_deterministic(small_run):
    again = run_experiment(small_config())
    assert json.dumps(again.aggregate, sort_keys=True) == json.dumps(small_run.aggregate, sort_keys=True)


def test_parallel_matches_serial(small_run):
    par = run_experiment(small_config(), jobs=2)
    assert json.dumps(par.aggregate, sort_keys=True) == json.dumps(small_run.aggregate, sort_keys=True)


def test_failed_runs_recorded():
    cfg = small_config(train=TrainConfig(epochs=1, hidden_dims=(16,), learning_rate=1e150, momentum=0.0),
                       n_seeds=2)
    cfg.evaluation.corruption_sweep = False
    res = run_experiment(cfg)
    for entry in res.aggregate["policies"]:
        assert len(entry["failed"]) == 2 and entry["per_seed"] == []
        assert entry["failed"][0]["epoch"] == 1
        assert entry["summary"]["ece"]["mean"] is None
    assert "n/a" in render_table(res.aggregate["policies"])


def test_corrupt_split_seeding():
    ds = generate_dataset(DatasetConfig(split_sizes={"train": 2, "val": 2, "test": 5}))
    spec = CorruptionSpec("speckle", 2)
    a = corrupt_split(ds.test, spec, 0)
    b = corrupt_split(ds.test[2:], spec, 0)
    # a sample's corruption depends on its id, not on its position in the split
    assert np.array_equal(a[2].pixels, b[0].pixels)
    c = corrupt_split(ds.test, CorruptionSpec("speckle", 3), 0)
    assert not np.array_equal(a[0].pixels, c[0].pixels)


def test_report_table(small_run, tmp_path):
    entries = small_run.aggregate["policies"]
    table = render_table(entries)
    lines = table.splitlines()
    assert lines[0] == "| Policy | Accuracy | ECE | MMC | MMC (incorrect) |"
    assert lines[2].startswith("| Baseline |") and lines[3].startswith("| P-smooth. |")
    assert table.count("**") >= 2 and " ± " in table
    single = render_table(entries[:1])
    assert len(single.split("\n\n")[0].splitlines()) == 3 and "**" not in single
    written = write_report_files(entries, tmp_path)
    names = sorted(p.name for p in written)
    assert "reliability_hard.csv" in names and "severity_power-0.5.csv" in names
    assert (tmp_path / "reliability_hard.csv").read_text().startswith(
        "lo,hi,count,mean_confidence,accuracy\n")


# --- config parsing ----------------------------------------------------------

def test_defaults_round_trip():
    cfg = config_from_dict({})
    assert cfg.to_dict() == ExperimentConfig().to_dict()
    assert config_from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
    assert cfg.dataset.physics == default_physics()
    assert cfg.dataset.test_shift == default_dataset_config().test_shift


def test_partial_physics_keeps_derived_constant():
    cfg = config_from_dict({"dataset": {"physics": {"height": 12}}})
    assert cfg.dataset.physics.height == 12
    assert cfg.dataset.physics.transmit_constant == default_physics().transmit_constant


def test_class_specs_rederive_constant():
    spec = {"class_id": 0, "name": "a", "scatterer_count_range": [1, 1], "rcs_mean": 10.0}
    spec2 = dict(spec, class_id=1, name="b", rcs_mean=100.0)
    cfg = config_from_dict({"dataset": {"class_specs": [spec, spec2]}})
    k = cfg.dataset.physics.transmit_constant
    assert 10 * math.log10(k * 10.0 / 43.0**4 / 1.0) == pytest.approx(3.0)


@pytest.mark.parametrize("doc, path", [
    ({"dataset": {"class_specs": []}}, "dataset.class_specs"),
    ({"dataset": {"split_sizes": {"train": 0, "val": 1, "test": 1}}}, "dataset.split_sizes.train"),
    ({"dataset": {"physics": {"height": 0}}}, "dataset"),
    ({"dataset": []}, "dataset"),
    ({"policies": []}, "policies"),
    ({"policies": [{"kind": "hard"}, {"kind": "power", "alpha": 0.8}]}, "policies[1]"),
    ({"policies": [{"kind": "mixup"}]}, "policies[0]"),
    ({"train": {"epochs": -1}}, "train"),
    ({"train": {"nonsense": 1}}, "train"),
    ({"n_seeds": 0}, "n_seeds"),
    ({"evaluation": {"n_bins": 0}}, "evaluation.n_bins"),
    ({"evaluation": {"range_edges": [20, 10]}}, "evaluation.range_edges"),
    ([], "<root>"),
])
def test_config_errors_name_field(doc, path):
    with pytest.raises(ConfigError) as info:
        config_from_dict(doc)
    assert info.value.path == path
    assert str(info.value).startswith(path)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(bad)
