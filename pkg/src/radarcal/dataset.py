"""Dataset assembly, training-split statistics and the JSON-lines dataset file."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from radarcal.errors import DegenerateStats, InvalidArgument
from radarcal.synth import (
    ClassSpec,
    GeneratorConfig,
    RoiSample,
    default_class_specs,
    default_physics,
    generate_sample,
    mean_power,
)

FORMAT_VERSION = 1
SPLITS = ("train", "val", "test")


def derive_seed(*keys: int) -> int:
    """Deterministic 64-bit child seed from a tuple of non-negative integers."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1, np.uint64)[0])


@dataclass
class DatasetConfig:
    class_specs: List[ClassSpec] = field(default_factory=default_class_specs)
    physics: Optional[GeneratorConfig] = None
    split_sizes: Dict[str, int] = field(
        default_factory=lambda: {"train": 20000, "val": 2000, "test": 10000}
    )
    range_interval: Optional[Tuple[float, float]] = None
    master_seed: int = 0
    # GeneratorConfig fields overridden for the test split only (emulated domain shift).
    test_shift: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.physics is None:
            self.physics = default_physics(self.class_specs) if self.class_specs else GeneratorConfig()
        if self.range_interval is None:
            self.range_interval = tuple(self.physics.range_interval)

    def to_dict(self) -> dict:
        return {
            "class_specs": [s.to_dict() for s in self.class_specs],
            "physics": self.physics.to_dict(),
            "split_sizes": dict(self.split_sizes),
            "range_interval": list(self.range_interval),
            "master_seed": self.master_seed,
            "test_shift": dict(self.test_shift),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        specs = [ClassSpec.from_dict(s) for s in d["class_specs"]] if "class_specs" in d \
            else default_class_specs()
        physics = GeneratorConfig.from_dict(d["physics"]) if "physics" in d else None
        kwargs = {"class_specs": specs, "physics": physics}
        if "split_sizes" in d:
            kwargs["split_sizes"] = {k: int(v) for k, v in d["split_sizes"].items()}
        if d.get("range_interval") is not None:
            kwargs["range_interval"] = tuple(float(v) for v in d["range_interval"])
        for key in ("master_seed",):
            if key in d:
                kwargs[key] = int(d[key])
        if "test_shift" in d:
            kwargs["test_shift"] = dict(d["test_shift"])
        return cls(**kwargs)


@dataclass
class Dataset:
    config: DatasetConfig
    splits: Dict[str, List[RoiSample]]

    @property
    def n_classes(self) -> int:
        return len(self.config.class_specs)

    @property
    def train(self) -> List[RoiSample]:
        return self.splits["train"]

    @property
    def val(self) -> List[RoiSample]:
        return self.splits["val"]

    @property
    def test(self) -> List[RoiSample]:
        return self.splits["test"]


@dataclass(frozen=True)
class DatasetStats:
    r_min: float
    r_max: float
    pi_min: float
    pi_max: float
    class_counts: Tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {"r_min": self.r_min, "r_max": self.r_max, "pi_min": self.pi_min,
                "pi_max": self.pi_max, "class_counts": list(self.class_counts)}

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetStats":
        return cls(float(d["r_min"]), float(d["r_max"]), float(d["pi_min"]), float(d["pi_max"]),
                   tuple(int(c) for c in d.get("class_counts", ())))


def generate_dataset(config: DatasetConfig) -> Dataset:
    """Generate train/val/test splits.

    Sample ids run consecutively over train, val, test. Every sample draws its
    class, range and pixels from a stream seeded by (master_seed, sample_id),
    so samples are independent of one another and of generation order.
    """
    specs = config.class_specs
    if not specs:
        raise InvalidArgument("class_specs: at least one class spec is required")
    for i, s in enumerate(specs):
        if s.class_id != i:
            raise InvalidArgument(f"class_specs[{i}]: class_id must equal its position, got {s.class_id}")
    sizes = config.split_sizes
    for name in SPLITS:
        if int(sizes.get(name, 0)) <= 0:
            raise InvalidArgument(f"split_sizes.{name}: must be > 0")
    physics = config.physics
    r_lo, r_hi = config.range_interval
    p_lo, p_hi = physics.range_interval
    if not p_lo <= r_lo < r_hi <= p_hi:
        raise InvalidArgument(
            f"range_interval {config.range_interval} must lie within physics.range_interval "
            f"{physics.range_interval}"
        )
    test_physics = replace(physics, **config.test_shift) if config.test_shift else physics

    splits: Dict[str, List[RoiSample]] = {}
    sample_id = 0
    for name in SPLITS:
        phys = test_physics if name == "test" else physics
        out = []
        for _ in range(int(sizes[name])):
            seed = derive_seed(config.master_seed, sample_id)
            rng = np.random.default_rng(seed)
            spec = specs[int(rng.integers(len(specs)))]
            range_m = float(rng.uniform(r_lo, r_hi))
            out.append(generate_sample(spec, range_m, phys, rng, sample_id=sample_id,
                                       provenance_seed=seed))
            sample_id += 1
        splits[name] = out
    return Dataset(config=config, splits=splits)


def dataset_stats(train_split: Sequence[RoiSample], n_classes: Optional[int] = None) -> DatasetStats:
    """Range and mean-power extrema of the training split."""
    if len(train_split) == 0:
        raise InvalidArgument("training split is empty")
    ranges = np.array([s.range_m for s in train_split])
    powers = np.array([mean_power(s) for s in train_split])
    labels = np.array([s.class_id for s in train_split])
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    stats = DatasetStats(
        r_min=float(ranges.min()),
        r_max=float(ranges.max()),
        pi_min=float(powers.min()),
        pi_max=float(powers.max()),
        class_counts=tuple(int(c) for c in np.bincount(labels, minlength=n_classes)),
    )
    if stats.r_min == stats.r_max:
        raise DegenerateStats(f"all training ranges equal ({stats.r_min})")
    if stats.pi_min == stats.pi_max:
        raise DegenerateStats(f"all training mean powers equal ({stats.pi_min})")
    return stats


def _fmt(x: float) -> str:
    return format(float(x), ".10g")


def write_dataset(dataset: Dataset, path) -> None:
    """Write a header line then one JSON object per sample."""
    cfg = dataset.config
    header = {
        "version": FORMAT_VERSION,
        "C": len(cfg.class_specs),
        "H": cfg.physics.height,
        "W": cfg.physics.width,
        "class_specs": [s.to_dict() for s in cfg.class_specs],
        "physics": cfg.physics.to_dict(),
        "master_seed": cfg.master_seed,
        "split_sizes": dict(cfg.split_sizes),
        "range_interval": list(cfg.range_interval),
        "test_shift": dict(cfg.test_shift),
    }
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for name in SPLITS:
            for s in dataset.splits.get(name, []):
                pixels = ",".join(_fmt(v) for v in s.pixels.ravel())
                fh.write(
                    f'{{"sample_id": {s.sample_id}, "split": "{name}", "class_id": {s.class_id}, '
                    f'"range_m": {_fmt(s.range_m)}, "provenance_seed": {s.provenance_seed}, '
                    f'"pixels": [{pixels}]}}\n'
                )


def read_dataset(path) -> Dataset:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        header = json.loads(fh.readline())
        if header.get("version") != FORMAT_VERSION:
            raise InvalidArgument(f"{path}: unsupported dataset version {header.get('version')!r}")
        H, W = int(header["H"]), int(header["W"])
        config = DatasetConfig.from_dict(header)
        splits: Dict[str, List[RoiSample]] = {name: [] for name in SPLITS}
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            rec = json.loads(line)
            pixels = np.asarray(rec["pixels"], dtype=float)
            if pixels.size != H * W:
                raise InvalidArgument(f"{path}:{lineno}: expected {H * W} pixels, got {pixels.size}")
            splits.setdefault(rec["split"], []).append(
                RoiSample(
                    pixels=pixels.reshape(H, W),
                    range_m=float(rec["range_m"]),
                    class_id=int(rec["class_id"]),
                    sample_id=int(rec["sample_id"]),
                    provenance_seed=int(rec.get("provenance_seed", 0)),
                )
            )
    return Dataset(config=config, splits=splits)
