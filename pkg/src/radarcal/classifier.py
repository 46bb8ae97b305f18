"""Feedforward softmax classifier trained on soft targets.

A plain numpy MLP (ReLU hidden layers, softmax output) trained with
minibatch SGD + momentum on the soft-target cross-entropy
``-sum_c y_c log p_c``. The logit gradient of that loss is ``p - y``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from radarcal.dataset import Dataset, DatasetStats, dataset_stats, derive_seed
from radarcal.errors import InvalidArgument, NumericFailure
from radarcal.smoothing import SmoothingPolicy, build_targets
from radarcal.synth import RoiSample, mean_power

MODEL_FORMAT_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 64
    epochs: int = 40
    seed: int = 0
    hidden_dims: Tuple[int, ...] = (64, 64)
    weight_init_scale: float = 2.0
    feature_offset: float = 0.1  # added to linear power before log10

    def __post_init__(self):
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if not self.learning_rate > 0:
            raise InvalidArgument("train.learning_rate must be > 0")
        if not 0 <= self.momentum < 1:
            raise InvalidArgument("train.momentum must be in [0, 1)")
        if self.batch_size <= 0:
            raise InvalidArgument("train.batch_size must be > 0")
        if self.epochs < 0:
            raise InvalidArgument("train.epochs must be >= 0")
        if any(h <= 0 for h in self.hidden_dims):
            raise InvalidArgument("train.hidden_dims entries must be > 0")
        if not self.weight_init_scale > 0:
            raise InvalidArgument("train.weight_init_scale must be > 0")
        if self.feature_offset < 0:
            raise InvalidArgument("train.feature_offset must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class ClassifierParams:
    weights: List[np.ndarray]  # layer l: (fan_in, fan_out)
    biases: List[np.ndarray]

    @property
    def layer_dims(self) -> List[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "ClassifierParams":
        return ClassifierParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self) -> List[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def init_params(layer_dims: Sequence[int], rng: np.random.Generator,
                scale: float = 2.0) -> ClassifierParams:
    """Uniform(-s, s) weights with s = scale / sqrt(fan_in); zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        s = scale / math.sqrt(fan_in)
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return ClassifierParams(weights, biases)


@dataclass
class FeatureStats:
    floor_offset: float
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"floor_offset": self.floor_offset, "mean": self.mean.tolist(),
                "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(float(d["floor_offset"]), np.asarray(d["mean"], dtype=float),
                   np.asarray(d["std"], dtype=float))


def _log_pixels(pixels: np.ndarray, floor_offset: float) -> np.ndarray:
    return np.log10(pixels + floor_offset)


def fit_feature_stats(train_split: Sequence[RoiSample], floor_offset: float = 0.1) -> FeatureStats:
    X = _log_pixels(np.stack([s.pixels.ravel() for s in train_split]), floor_offset)
    std = X.std(axis=0)
    return FeatureStats(floor_offset, X.mean(axis=0), np.where(std > 0, std, 1.0))


def featurize(sample: RoiSample, stats: FeatureStats) -> np.ndarray:
    """Per-pixel log10 power, standardized with training-split mean and std."""
    return (_log_pixels(sample.pixels.ravel(), stats.floor_offset) - stats.mean) / stats.std


def featurize_batch(samples: Sequence[RoiSample], stats: FeatureStats) -> np.ndarray:
    if len(samples) == 0:
        return np.empty((0, stats.mean.size))
    X = _log_pixels(np.stack([s.pixels.ravel() for s in samples]), stats.floor_offset)
    return (X - stats.mean) / stats.std


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward_cache(params: ClassifierParams, X: np.ndarray):
    if X.shape[-1] != params.weights[0].shape[0]:
        raise InvalidArgument(
            f"feature dimension {X.shape[-1]} does not match input layer {params.weights[0].shape[0]}"
        )
    acts = [X]
    pre = []
    h = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        if i != last:
            acts.append(h)
    return acts, pre


def logits(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    X = np.asarray(features, dtype=float)
    _, pre = _forward_cache(params, X)
    return pre[-1]


def forward(params: ClassifierParams, features: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector or a batch (rows)."""
    return softmax(logits(params, features))


def loss_and_grad(params: ClassifierParams, features: np.ndarray,
                  targets: np.ndarray) -> Tuple[float, ClassifierParams]:
    """Mean soft-target cross-entropy over the batch and its exact gradient."""
    X = np.atleast_2d(np.asarray(features, dtype=float))
    Y = np.atleast_2d(np.asarray(targets, dtype=float))
    if Y.shape != (X.shape[0], params.weights[-1].shape[1]):
        raise InvalidArgument(f"targets shape {Y.shape} does not match batch/classes")
    with np.errstate(over="ignore", invalid="ignore"):  # overflow surfaces as NumericFailure
        acts, pre = _forward_cache(params, X)
        z = pre[-1]
        zmax = z.max(axis=1, keepdims=True)
        log_norm = zmax + np.log(np.exp(z - zmax).sum(axis=1, keepdims=True))
        log_p = z - log_norm
    n = X.shape[0]
    loss = float(-(Y * log_p).sum() / n)
    if not math.isfinite(loss):
        raise NumericFailure("non-finite loss")

    delta = (np.exp(log_p) - Y) / n
    gw = [None] * len(params.weights)
    gb = [None] * len(params.biases)
    for i in range(len(params.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (pre[i - 1] > 0)
    grads = ClassifierParams(gw, gb)
    if not grads.is_finite():
        raise NumericFailure("non-finite gradient")
    return loss, grads


def sgd_step(params: ClassifierParams, grads: ClassifierParams, velocity: List[np.ndarray],
             learning_rate: float, momentum: float) -> None:
    """In-place heavy-ball update; ``velocity`` holds one array per parameter array."""
    for p, g, v in zip(params.arrays(), grads.arrays(), velocity):
        v *= momentum
        v -= learning_rate * g
        p += v


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float


@dataclass
class TrainResult:
    params: ClassifierParams
    feature_stats: FeatureStats
    log: List[EpochLog]
    best_epoch: int  # 0 means the initial parameters
    seed: int
    policy: SmoothingPolicy
    config: TrainConfig
    stats: DatasetStats


def _accuracy(params: ClassifierParams, X: np.ndarray, y: np.ndarray) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(logits(params, X), axis=1) == y))


def train(train_split: Sequence[RoiSample], val_split: Sequence[RoiSample],
          policy: SmoothingPolicy, stats: DatasetStats, config: TrainConfig,
          n_classes: Optional[int] = None) -> TrainResult:
    """Train one classifier and keep the epoch with the best validation accuracy.

    Ties in validation accuracy go to the earlier epoch. Targets are built
    once from ``policy`` before training starts.
    """
    if len(train_split) == 0 or len(val_split) == 0:
        raise InvalidArgument("train and validation splits must be non-empty")
    if n_classes is None:
        n_classes = max(len(stats.class_counts), 1 + max(s.class_id for s in train_split))
    fstats = fit_feature_stats(train_split, config.feature_offset)
    X = featurize_batch(train_split, fstats)
    Y = build_targets(train_split, policy, stats, n_classes)
    Xv = featurize_batch(val_split, fstats)
    yv = np.array([s.class_id for s in val_split])

    rng = np.random.default_rng(config.seed)
    dims = [X.shape[1], *config.hidden_dims, n_classes]
    params = init_params(dims, rng, config.weight_init_scale)
    velocity = [np.zeros_like(a) for a in params.arrays()]
    best = params.copy()
    best_acc = -1.0
    best_epoch = 0
    log: List[EpochLog] = []

    n = X.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = loss_and_grad(params, X[idx], Y[idx])
            except NumericFailure as exc:
                raise NumericFailure(f"training diverged at epoch {epoch}: {exc}",
                                     epoch=epoch, seed=config.seed) from None
            total += loss * len(idx)
            sgd_step(params, grads, velocity, config.learning_rate, config.momentum)
        val_acc = _accuracy(params, Xv, yv)
        log.append(EpochLog(epoch, total / n, val_acc))
        if val_acc > best_acc:
            best_acc, best, best_epoch = val_acc, params.copy(), epoch

    return TrainResult(best, fstats, log, best_epoch, config.seed, policy, config, stats)


def multi_seed_train(policy: SmoothingPolicy, dataset: Dataset, config: TrainConfig,
                     n_seeds: int, stats: Optional[DatasetStats] = None) -> List[TrainResult]:
    """Independent runs with seeds derived from (config.seed, run index)."""
    if n_seeds < 1:
        raise InvalidArgument("n_seeds must be >= 1")
    if stats is None:
        stats = dataset_stats(dataset.train, dataset.n_classes)
    return [
        train(dataset.train, dataset.val, policy, stats,
              replace(config, seed=derive_seed(config.seed, i)), dataset.n_classes)
        for i in range(n_seeds)
    ]


@dataclass
class PredictionRecord:
    probs: np.ndarray
    predicted_class: int
    true_class: int
    range_m: float
    mean_power: float

    @property
    def confidence(self) -> float:
        return float(self.probs.max())

    @property
    def correct(self) -> bool:
        return self.predicted_class == self.true_class


def predict_proba(params: ClassifierParams, samples: Sequence[RoiSample],
                  fstats: FeatureStats) -> np.ndarray:
    if len(samples) == 0:
        return np.empty((0, params.weights[-1].shape[1]))
    return forward(params, featurize_batch(samples, fstats))


def predict_all(params: ClassifierParams, samples: Sequence[RoiSample],
                fstats: FeatureStats) -> List[PredictionRecord]:
    probs = predict_proba(params, samples, fstats)
    return [
        PredictionRecord(p, int(np.argmax(p)), s.class_id, s.range_m, mean_power(s))
        for p, s in zip(probs, samples)
    ]


def save_model(result: TrainResult, path) -> None:
    p = result.params
    doc = {
        "version": MODEL_FORMAT_VERSION,
        "layer_dims": p.layer_dims,
        "weights": [w.ravel().tolist() for w in p.weights],
        "biases": [b.tolist() for b in p.biases],
        "feature_normalization": result.feature_stats.to_dict(),
        "policy": result.policy.to_dict(),
        "config": result.config.to_dict(),
        "seed": result.seed,
        "best_epoch": result.best_epoch,
        "dataset_stats": result.stats.to_dict(),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> TrainResult:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise InvalidArgument(f"{path}: unsupported model version {doc.get('version')!r}")
    dims = doc["layer_dims"]
    weights = [np.asarray(w, dtype=float).reshape(i, o)
               for w, i, o in zip(doc["weights"], dims[:-1], dims[1:])]
    biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
    return TrainResult(
        params=ClassifierParams(weights, biases),
        feature_stats=FeatureStats.from_dict(doc["feature_normalization"]),
        log=[],
        best_epoch=int(doc.get("best_epoch", 0)),
        seed=int(doc["seed"]),
        policy=SmoothingPolicy.from_dict(doc["policy"]),
        config=TrainConfig.from_dict(doc["config"]),
        stats=DatasetStats.from_dict(doc["dataset_stats"]),
    )


def write_training_log(log: Sequence[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "val_accuracy"])
        for e in log:
            writer.writerow([e.epoch, repr(e.train_loss), repr(e.val_accuracy)])
