"""Training targets: hard labels, fixed label smoothing, and range/power-adaptive smoothing.

All smoothing mixes the one-hot label with a class prior,
``target = (1 - eps) * onehot + eps * prior``. The adaptive variants pick a
per-sample ``eps = 1 - exp(-alpha * t)`` where ``t`` in [0, 1] grows with the
object's range (``range``) or shrinks with the ROI's mean power (``power``).
Keeping ``alpha < ln 2`` caps ``eps`` below 1/2, so the true class always
retains more than half of the target mass.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from radarcal.dataset import DatasetStats
from radarcal.errors import InvalidArgument
from radarcal.synth import RoiSample, mean_power

ALPHA_BOUND = -math.log(0.5)
KINDS = ("hard", "epsilon", "range", "power")
_ALIASES = {
    "hard": "hard", "baseline": "hard",
    "epsilon": "epsilon", "eps": "epsilon", "eps-smooth": "epsilon", "ls": "epsilon",
    "range": "range", "r-smooth": "range", "r": "range",
    "power": "power", "p-smooth": "power", "p": "power",
}
DISPLAY_NAMES = {"hard": "Baseline", "epsilon": "eps-smooth.", "range": "R-smooth.",
                 "power": "P-smooth."}


def resolve_kind(name: str) -> str:
    """Canonical policy kind for a name or alias."""
    kind = _ALIASES.get(str(name).lower())
    if kind is None:
        raise InvalidArgument(f"unknown policy kind {name!r}; expected one of {KINDS}")
    return kind


def uniform_prior(n_classes: int) -> np.ndarray:
    return np.full(n_classes, 1.0 / n_classes)


def empirical_prior(class_counts: Sequence[int]) -> np.ndarray:
    counts = np.asarray(class_counts, dtype=float)
    if counts.sum() <= 0:
        raise InvalidArgument("class_counts must have a positive total")
    return counts / counts.sum()


def _check_prior(prior: np.ndarray, n_classes: int) -> np.ndarray:
    prior = np.asarray(prior, dtype=float)
    if prior.shape != (n_classes,):
        raise InvalidArgument(f"prior must have length {n_classes}, got shape {prior.shape}")
    if np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-12:
        raise InvalidArgument("prior must be non-negative and sum to 1")
    return prior


def check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < ALPHA_BOUND:
        raise InvalidArgument(f"alpha must satisfy 0 < alpha < -ln(0.5) = {ALPHA_BOUND:.7f}, got {alpha}")
    return float(alpha)


def smooth_label(class_id: int, epsilon: float, prior, n_classes: int) -> np.ndarray:
    """Mix the one-hot label of ``class_id`` with ``prior`` by weight ``epsilon``."""
    if not 0.0 <= epsilon <= 1.0:
        raise InvalidArgument(f"epsilon must be in [0, 1], got {epsilon}")
    if not 0 <= class_id < n_classes:
        raise InvalidArgument(f"class_id {class_id} out of range for {n_classes} classes")
    prior = _check_prior(prior, n_classes)
    probs = epsilon * prior
    probs[class_id] += 1.0 - epsilon
    return probs


def _clamp01(t: float) -> float:
    return min(1.0, max(0.0, t))


def epsilon_from_range(range_m: float, alpha: float, stats: DatasetStats) -> float:
    """Smoothing factor that grows with normalized range; 0 at the nearest training range."""
    check_alpha(alpha)
    t = _clamp01((range_m - stats.r_min) / (stats.r_max - stats.r_min))
    return -math.expm1(-alpha * t)


def epsilon_from_power(pi: float, alpha: float, stats: DatasetStats) -> float:
    """Smoothing factor that grows as mean power falls; 0 at the strongest training sample."""
    check_alpha(alpha)
    u = _clamp01((pi - stats.pi_min) / (stats.pi_max - stats.pi_min))
    return -math.expm1(-alpha * (1.0 - u))


@dataclass(frozen=True)
class SmoothingPolicy:
    """How targets are built. ``prior`` is "uniform", "empirical" or an explicit vector."""

    kind: str = "hard"
    epsilon: Optional[float] = None
    alpha: Optional[float] = None
    prior: Union[str, tuple] = "uniform"

    def __post_init__(self):
        kind = resolve_kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind == "epsilon":
            if self.epsilon is None or not 0.0 <= self.epsilon < 1.0:
                raise InvalidArgument(f"epsilon policy needs 0 <= epsilon < 1, got {self.epsilon}")
        if kind in ("range", "power"):
            if self.alpha is None:
                raise InvalidArgument(f"{kind} policy needs alpha")
            check_alpha(self.alpha)
        if not isinstance(self.prior, str):
            prior = tuple(float(p) for p in self.prior)
            if any(p < 0 for p in prior) or abs(sum(prior) - 1.0) > 1e-12:
                raise InvalidArgument("prior must be non-negative and sum to 1")
            object.__setattr__(self, "prior", prior)
        elif self.prior not in ("uniform", "empirical"):
            raise InvalidArgument(f"prior must be 'uniform', 'empirical' or a vector, got {self.prior!r}")

    @property
    def name(self) -> str:
        if self.kind == "hard":
            return "hard"
        if self.kind == "epsilon":
            return f"epsilon-{self.epsilon:g}"
        return f"{self.kind}-{self.alpha:g}"

    @property
    def display_name(self) -> str:
        return DISPLAY_NAMES[self.kind]

    def prior_vector(self, n_classes: int, stats: Optional[DatasetStats] = None) -> np.ndarray:
        if self.prior == "uniform":
            return uniform_prior(n_classes)
        if self.prior == "empirical":
            if stats is None or len(stats.class_counts) != n_classes:
                raise InvalidArgument("empirical prior needs training class counts")
            return empirical_prior(stats.class_counts)
        return _check_prior(np.array(self.prior), n_classes)

    def to_dict(self) -> dict:
        d = {"kind": self.kind}
        if self.epsilon is not None:
            d["epsilon"] = self.epsilon
        if self.alpha is not None:
            d["alpha"] = self.alpha
        d["prior"] = self.prior if isinstance(self.prior, str) else list(self.prior)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SmoothingPolicy":
        prior = d.get("prior", "uniform")
        return cls(kind=d["kind"], epsilon=d.get("epsilon"), alpha=d.get("alpha"),
                   prior=prior if isinstance(prior, str) else tuple(prior))


def sample_epsilon(sample: RoiSample, policy: SmoothingPolicy, stats: DatasetStats) -> float:
    if policy.kind == "hard":
        return 0.0
    if policy.kind == "epsilon":
        return float(policy.epsilon)
    if policy.kind == "range":
        return epsilon_from_range(sample.range_m, policy.alpha, stats)
    return epsilon_from_power(mean_power(sample), policy.alpha, stats)


def apply_policy(sample: RoiSample, policy: SmoothingPolicy, stats: DatasetStats,
                 n_classes: int) -> np.ndarray:
    """Training target for one sample."""
    prior = policy.prior_vector(n_classes, stats)
    return smooth_label(sample.class_id, sample_epsilon(sample, policy, stats), prior, n_classes)


def build_targets(samples: Sequence[RoiSample], policy: SmoothingPolicy, stats: DatasetStats,
                  n_classes: int) -> np.ndarray:
    """Targets for a whole split, one row per sample."""
    prior = policy.prior_vector(n_classes, stats)
    out = np.empty((len(samples), n_classes))
    for i, s in enumerate(samples):
        out[i] = smooth_label(s.class_id, sample_epsilon(s, policy, stats), prior, n_classes)
    return out
