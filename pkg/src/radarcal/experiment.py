"""Experiment orchestration: config, multi-seed training, evaluation, sweeps, aggregation."""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from radarcal.calibration import (
    DEFAULT_RANGE_EDGES,
    CalibrationReport,
    Predictions,
    RangeGroup,
    calibration_report,
    range_binned_report,
    reliability_table,
)
from radarcal.classifier import TrainConfig, TrainResult, predict_proba, train
from radarcal.corruptions import KINDS, CorruptionSpec, corrupt
from radarcal.dataset import (
    Dataset,
    DatasetConfig,
    DatasetStats,
    dataset_stats,
    derive_seed,
    generate_dataset,
)
from radarcal.errors import InvalidArgument, NumericFailure
from radarcal.smoothing import SmoothingPolicy
from radarcal.synth import ClassSpec, RoiSample, mean_power, transmit_constant_for_snr

log = logging.getLogger(__name__)

METRICS = ("accuracy", "ece", "mmc_incorrect")
SEVERITIES = (1, 2, 3)
CORRUPTION_SALT = 0xC0


class ConfigError(InvalidArgument):
    """Invalid experiment configuration; ``path`` names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


def default_policies() -> List[SmoothingPolicy]:
    return [
        SmoothingPolicy("hard"),
        SmoothingPolicy("epsilon", epsilon=0.1),
        SmoothingPolicy("range", alpha=0.5),
        SmoothingPolicy("power", alpha=0.5),
    ]


def default_dataset_config() -> DatasetConfig:
    return DatasetConfig(test_shift={"noise_floor": 4.0})


@dataclass
class EvaluationConfig:
    n_bins: int = 10
    range_edges: Tuple[float, ...] = DEFAULT_RANGE_EDGES
    min_range_support: int = 30
    corruption_sweep: bool = True
    split: str = "test"

    def to_dict(self) -> dict:
        return {"n_bins": self.n_bins, "range_edges": list(self.range_edges),
                "min_range_support": self.min_range_support,
                "corruption_sweep": self.corruption_sweep, "split": self.split}


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig = field(default_factory=default_dataset_config)
    policies: List[SmoothingPolicy] = field(default_factory=default_policies)
    train: TrainConfig = field(default_factory=TrainConfig)
    n_seeds: int = 10
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset.to_dict(),
            "policies": [p.to_dict() for p in self.policies],
            "train": self.train.to_dict(),
            "n_seeds": self.n_seeds,
            "evaluation": self.evaluation.to_dict(),
        }


def _section(d: dict, key: str) -> dict:
    value = d.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(key, "must be an object")
    return value


def config_from_dict(d: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig; missing fields take defaults."""
    if not isinstance(d, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    ds = _section(d, "dataset")
    base = default_dataset_config().to_dict()
    physics = dict(base["physics"])
    physics.update(_section(ds, "physics"))
    base.update(ds)
    base["physics"] = physics
    if "class_specs" in ds:
        if not isinstance(ds["class_specs"], list) or len(ds["class_specs"]) == 0:
            raise ConfigError("dataset.class_specs", "must list at least one class")
        if "transmit_constant" not in _section(ds, "physics"):
            try:
                specs = [ClassSpec.from_dict(s) for s in ds["class_specs"]]
            except (InvalidArgument, KeyError, TypeError) as exc:
                raise ConfigError("dataset.class_specs", str(exc)) from None
            physics["transmit_constant"] = transmit_constant_for_snr(
                specs, physics["range_interval"][1], physics["noise_floor"])
    if "split_sizes" in ds:
        for name in ("train", "val", "test"):
            v = ds["split_sizes"].get(name)
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"dataset.split_sizes.{name}", "must be a positive integer")
    try:
        dataset = DatasetConfig.from_dict(base)
    except (InvalidArgument, TypeError, KeyError) as exc:
        raise ConfigError("dataset", str(exc)) from None

    policies = d.get("policies")
    if policies is None:
        parsed = default_policies()
    else:
        if not isinstance(policies, list) or len(policies) == 0:
            raise ConfigError("policies", "must list at least one policy")
        parsed = []
        for i, p in enumerate(policies):
            try:
                parsed.append(SmoothingPolicy.from_dict(p))
            except (InvalidArgument, KeyError, TypeError) as exc:
                raise ConfigError(f"policies[{i}]", str(exc)) from None

    try:
        train_cfg = TrainConfig.from_dict(_section(d, "train"))
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError("train", str(exc)) from None

    n_seeds = d.get("n_seeds", 10)
    if not isinstance(n_seeds, int) or n_seeds < 1:
        raise ConfigError("n_seeds", "must be an integer >= 1")

    ev = _section(d, "evaluation")
    try:
        evaluation = EvaluationConfig(
            n_bins=int(ev.get("n_bins", 10)),
            range_edges=tuple(float(e) for e in ev.get("range_edges", DEFAULT_RANGE_EDGES)),
            min_range_support=int(ev.get("min_range_support", 30)),
            corruption_sweep=bool(ev.get("corruption_sweep", True)),
            split=str(ev.get("split", "test")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError("evaluation", str(exc)) from None
    if evaluation.n_bins < 1:
        raise ConfigError("evaluation.n_bins", "must be >= 1")
    edges = evaluation.range_edges
    if any(b <= a for a, b in zip(edges, edges[1:])):
        raise ConfigError("evaluation.range_edges", "must be strictly increasing")
    return ExperimentConfig(dataset, parsed, train_cfg, n_seeds, evaluation)


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(str(path), "config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


# --- evaluation --------------------------------------------------------------


def predictions_for(model: TrainResult, samples: Sequence[RoiSample]) -> Predictions:
    return Predictions(
        probs=predict_proba(model.params, samples, model.feature_stats),
        true_class=np.array([s.class_id for s in samples], dtype=int),
        range_m=np.array([s.range_m for s in samples], dtype=float),
        mean_power=np.array([mean_power(s) for s in samples], dtype=float),
    )


@dataclass
class ModelEvaluation:
    seed: int
    policy: SmoothingPolicy
    report: CalibrationReport
    range_groups: List[RangeGroup]
    corruption: Dict[Tuple[str, int], CalibrationReport] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "policy": self.policy.to_dict(),
            "report": self.report.to_dict(),
            "range_groups": [g.to_dict() for g in self.range_groups],
            "corruption": [
                {"kind": k, "severity": s, "report": r.to_dict()}
                for (k, s), r in sorted(self.corruption.items())
            ],
        }


def evaluate_model(model: TrainResult, samples: Sequence[RoiSample],
                   evaluation: EvaluationConfig) -> ModelEvaluation:
    preds = predictions_for(model, samples)
    return ModelEvaluation(
        seed=model.seed,
        policy=model.policy,
        report=calibration_report(preds, evaluation.n_bins),
        range_groups=range_binned_report(preds, evaluation.range_edges, evaluation.n_bins,
                                         evaluation.min_range_support),
    )


def corrupt_split(samples: Sequence[RoiSample], spec: CorruptionSpec,
                  master_seed: int) -> List[RoiSample]:
    """Corrupted copy of a split; each sample gets its own (kind, severity, id) seed."""
    kind_idx = KINDS.index(spec.kind)
    return [
        corrupt(s, spec, np.random.default_rng(
            derive_seed(master_seed, CORRUPTION_SALT, kind_idx, spec.severity, s.sample_id)))
        for s in samples
    ]


def corruption_sweep(models: Sequence[TrainResult], evaluations: Sequence[ModelEvaluation],
                     samples: Sequence[RoiSample], master_seed: int, n_bins: int = 10,
                     kinds: Sequence[str] = KINDS, severities: Sequence[int] = SEVERITIES) -> None:
    """Fill ``evaluation.corruption`` for every model; each split is corrupted once."""
    for kind in kinds:
        for severity in severities:
            spec = CorruptionSpec(kind, severity)
            log.info("corruption %s severity %d", kind, severity)
            corrupted = corrupt_split(samples, spec, master_seed)
            for model, ev in zip(models, evaluations):
                ev.corruption[(kind, severity)] = calibration_report(
                    predictions_for(model, corrupted), n_bins)


# --- aggregation -------------------------------------------------------------


def mean_std(values: Sequence[Optional[float]]) -> dict:
    """Mean and sample standard deviation (ddof=1; 0 for a single value), skipping absent values."""
    vals = [float(v) for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))]
    if not vals:
        return {"mean": None, "std": None, "n": 0}
    arr = np.array(vals)
    std = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
    return {"mean": float(arr.mean()), "std": std, "n": int(arr.size)}


def _metric_summary(reports: Sequence[CalibrationReport]) -> dict:
    out = {m: mean_std([getattr(r, m) for r in reports]) for m in METRICS}
    out["mmc_all"] = mean_std([r.mmc_all for r in reports])
    return out


def aggregate_policy(policy: SmoothingPolicy, evaluations: Sequence[ModelEvaluation],
                     failed: Sequence[dict] = (), pooled: Optional[Predictions] = None,
                     n_bins: int = 10) -> dict:
    """Cross-seed summary of one policy (one entry of an AggregateResult)."""
    evaluations = list(evaluations)
    entry = {
        "policy": policy.to_dict(),
        "name": policy.name,
        "display_name": policy.display_name,
        "per_seed": [
            {"seed": ev.seed, "accuracy": ev.report.accuracy, "ece": ev.report.ece,
             "mmc_incorrect": ev.report.mmc_incorrect, "mmc_all": ev.report.mmc_all}
            for ev in evaluations
        ],
        "failed": list(failed),
        "summary": _metric_summary([ev.report for ev in evaluations]),
    }
    if evaluations and evaluations[0].range_groups:
        groups = []
        for i, g in enumerate(evaluations[0].range_groups):
            reps = [ev.range_groups[i].report for ev in evaluations if ev.range_groups[i].report]
            row = {"lo": g.lo if math.isfinite(g.lo) else None,
                   "hi": g.hi if math.isfinite(g.hi) else None,
                   "count": g.count, "low_support": g.low_support}
            row.update(_metric_summary(reps) if reps else {m: mean_std([]) for m in METRICS})
            groups.append(row)
        entry["range_bins"] = groups
    if evaluations and evaluations[0].corruption:
        cells = sorted(evaluations[0].corruption)
        entry["corruption_cells"] = [
            {"kind": k, "severity": s,
             **_metric_summary([ev.corruption[(k, s)] for ev in evaluations])}
            for k, s in cells
        ]
        per_sev = []
        for sev in sorted({s for _, s in cells}):
            kinds = [k for k, s in cells if s == sev]
            # average over kinds per seed, then mean/std over seeds
            row = {"severity": sev}
            for m in METRICS + ("mmc_all",):
                per_seed = []
                for ev in evaluations:
                    vals = [getattr(ev.corruption[(k, sev)], m) for k in kinds]
                    vals = [v for v in vals if v is not None]
                    per_seed.append(float(np.mean(vals)) if vals else None)
                row[m] = mean_std(per_seed)
                row[m]["per_seed"] = per_seed
            per_sev.append(row)
        entry["corruption_by_severity"] = per_sev
    if pooled is not None and len(pooled):
        entry["reliability_bins"] = [b.__dict__ for b in reliability_table(pooled, n_bins)]
    return entry


def pool_predictions(parts: Sequence[Predictions]) -> Predictions:
    """Concatenate prediction sets, e.g. all seeds of one policy."""
    return Predictions(np.concatenate([q.probs for q in parts]),
                       np.concatenate([q.true_class for q in parts]),
                       np.concatenate([q.range_m for q in parts]),
                       np.concatenate([q.mean_power for q in parts]))


def aggregate(results: Dict[str, dict]) -> dict:
    return {"version": 1, "policies": list(results.values())}


# --- end-to-end --------------------------------------------------------------


def _train_job(args):
    dataset, policy, stats, cfg = args
    try:
        return train(dataset.train, dataset.val, policy, stats, cfg, dataset.n_classes), None
    except NumericFailure as exc:
        return None, {"seed": cfg.seed, "epoch": exc.epoch, "error": str(exc)}


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    stats: DatasetStats
    models: Dict[str, List[TrainResult]]
    evaluations: Dict[str, List[ModelEvaluation]]
    failures: Dict[str, List[dict]]
    aggregate: dict


def seeds_for(config: TrainConfig, n_seeds: int) -> List[int]:
    return [derive_seed(config.seed, i) for i in range(n_seeds)]


def run_experiment(config: ExperimentConfig, dataset: Optional[Dataset] = None,
                   jobs: int = 1) -> ExperimentResult:
    """Train every (policy, seed) pair, evaluate, optionally sweep corruptions, aggregate.

    Run ``i`` of every policy uses the same derived seed, so runs pair up
    across policies by index.
    """
    if dataset is None:
        log.info("generating dataset")
        dataset = generate_dataset(config.dataset)
    stats = dataset_stats(dataset.train, dataset.n_classes)
    seeds = seeds_for(config.train, config.n_seeds)
    jobs_list = [(dataset, p, stats, replace(config.train, seed=s))
                 for p in config.policies for s in seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_train_job, jobs_list))
    else:
        outcomes = []
        for job in jobs_list:
            log.info("training %s seed %d", job[1].name, job[3].seed)
            outcomes.append(_train_job(job))

    samples = dataset.splits[config.evaluation.split]
    models, evaluations, failures = {}, {}, {}
    for i, p in enumerate(config.policies):
        chunk = outcomes[i * len(seeds):(i + 1) * len(seeds)]
        models[p.name] = [m for m, _ in chunk if m is not None]
        failures[p.name] = [f for _, f in chunk if f is not None]
        evaluations[p.name] = [evaluate_model(m, samples, config.evaluation) for m in models[p.name]]

    if config.evaluation.corruption_sweep:
        all_models = [m for p in config.policies for m in models[p.name]]
        all_evals = [e for p in config.policies for e in evaluations[p.name]]
        corruption_sweep(all_models, all_evals, samples, config.dataset.master_seed,
                         config.evaluation.n_bins)

    results = {}
    for p in config.policies:
        pooled = None
        if models[p.name]:
            pooled = pool_predictions([predictions_for(m, samples) for m in models[p.name]])
        results[p.name] = aggregate_policy(p, evaluations[p.name], failures[p.name], pooled,
                                           config.evaluation.n_bins)
    return ExperimentResult(config, stats, models, evaluations, failures, aggregate(results))
