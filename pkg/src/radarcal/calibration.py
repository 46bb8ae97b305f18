"""Calibration metrics: equal-mass ECE, mean maximal confidence, reliability tables.

Records are sorted by confidence (max class probability; stable, so ties keep
input order) and cut into ``n_bins`` contiguous groups. With N records the
first ``N mod n_bins`` groups hold ``ceil(N / n_bins)`` records and the rest
``floor(N / n_bins)``. Groups that would be empty (``n_bins > N``) are omitted.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import List, Optional, Sequence, Union

import numpy as np

from radarcal.classifier import PredictionRecord
from radarcal.errors import EmptySubset, InvalidArgument

DEFAULT_RANGE_EDGES = (10.0, 15.0, 20.0, 25.0, 30.0, 35.0, 40.0)
SUBSETS = ("all", "correct", "incorrect")


@dataclass
class Predictions:
    """Column view of a record set; what the metric code works on."""

    probs: np.ndarray  # (N, C)
    true_class: np.ndarray
    range_m: np.ndarray
    mean_power: np.ndarray

    def __len__(self):
        return len(self.true_class)

    @property
    def confidence(self) -> np.ndarray:
        return self.probs.max(axis=1)

    @property
    def predicted(self) -> np.ndarray:
        return np.argmax(self.probs, axis=1)

    @property
    def correct(self) -> np.ndarray:
        return self.predicted == self.true_class

    def subset(self, mask: np.ndarray) -> "Predictions":
        return Predictions(self.probs[mask], self.true_class[mask], self.range_m[mask],
                           self.mean_power[mask])

    def records(self) -> List[PredictionRecord]:
        return [PredictionRecord(p, int(np.argmax(p)), int(t), float(r), float(m))
                for p, t, r, m in zip(self.probs, self.true_class, self.range_m, self.mean_power)]

    @classmethod
    def from_records(cls, records: Sequence[PredictionRecord]) -> "Predictions":
        if len(records) == 0:
            return cls(np.empty((0, 0)), np.empty(0, int), np.empty(0), np.empty(0))
        return cls(
            np.stack([r.probs for r in records]),
            np.array([r.true_class for r in records]),
            np.array([r.range_m for r in records], dtype=float),
            np.array([r.mean_power for r in records], dtype=float),
        )


RecordSet = Union[Sequence[PredictionRecord], Predictions]


def as_predictions(records: RecordSet) -> Predictions:
    return records if isinstance(records, Predictions) else Predictions.from_records(records)


@dataclass
class ReliabilityBin:
    count: int
    mean_confidence: float
    accuracy: float
    confidence_lo: float
    confidence_hi: float

    @property
    def over_confident(self) -> bool:
        return self.accuracy < self.mean_confidence


def bin_sizes(n: int, n_bins: int) -> List[int]:
    q, r = divmod(n, n_bins)
    return [q + 1 if b < r else q for b in range(n_bins)]


def _check(n: int, n_bins: int):
    if n == 0:
        raise InvalidArgument("records must be non-empty")
    if n_bins < 1:
        raise InvalidArgument(f"n_bins must be >= 1, got {n_bins}")


def _bins_from_arrays(conf: np.ndarray, correct: np.ndarray, n_bins: int) -> List[ReliabilityBin]:
    _check(len(conf), n_bins)
    order = np.argsort(conf, kind="stable")
    c = conf[order]
    ok = correct[order].astype(float)
    bins = []
    start = 0
    for size in bin_sizes(len(c), n_bins):
        if size == 0:
            continue
        sl = slice(start, start + size)
        bins.append(ReliabilityBin(size, float(c[sl].mean()), float(ok[sl].mean()),
                                   float(c[start]), float(c[start + size - 1])))
        start += size
    return bins


def _ece_from_bins(bins: Sequence[ReliabilityBin]) -> float:
    n = sum(b.count for b in bins)
    return float(sum(b.count / n * abs(b.accuracy - b.mean_confidence) for b in bins))


def reliability_table(records: RecordSet, n_bins: int = 10) -> List[ReliabilityBin]:
    """Per-bin confidence and accuracy for a reliability diagram."""
    p = as_predictions(records)
    _check(len(p), n_bins)
    return _bins_from_arrays(p.confidence, p.correct, n_bins)


def ece(records: RecordSet, n_bins: int = 10):
    """Equal-mass expected calibration error. Returns ``(ece, bins)``."""
    bins = reliability_table(records, n_bins)
    return _ece_from_bins(bins), bins


def ece_bruteforce_oracle(records: RecordSet, n_bins: int = 10) -> float:
    """Independent, deliberately naive ECE used to cross-check :func:`ece`."""
    if isinstance(records, Predictions):
        records = records.records()
    n = len(records)
    _check(n, n_bins)
    confs = [max(float(v) for v in r.probs) for r in records]
    hits = [1 if r.predicted_class == r.true_class else 0 for r in records]
    ranked = sorted(range(n), key=lambda i: (confs[i], i))
    sizes = [0] * n_bins
    for i in range(n):
        sizes[i % n_bins] += 1
    total = Fraction(0)
    pos = 0
    for size in sizes:
        if size == 0:
            continue
        members = ranked[pos:pos + size]
        pos += size
        conf_sum = sum((Fraction(confs[i]) for i in members), Fraction(0))
        hit_sum = sum(hits[i] for i in members)
        total += Fraction(size, n) * abs(Fraction(hit_sum, size) - conf_sum / size)
    return float(total)


def mmc(records: RecordSet, subset: str = "all") -> float:
    """Mean maximal confidence over all, correctly, or incorrectly classified records."""
    p = as_predictions(records)
    if subset not in SUBSETS:
        raise InvalidArgument(f"subset must be one of {SUBSETS}, got {subset!r}")
    conf = p.confidence if len(p) else np.empty(0)
    if subset == "correct":
        conf = conf[p.correct]
    elif subset == "incorrect":
        conf = conf[~p.correct]
    if conf.size == 0:
        raise EmptySubset(f"no {subset} records")
    return float(conf.mean())


def _mmc_or_none(p: Predictions, subset: str) -> Optional[float]:
    try:
        return mmc(p, subset)
    except EmptySubset:
        return None


@dataclass
class CalibrationReport:
    n: int
    accuracy: float
    ece: float
    mmc_all: float
    mmc_correct: Optional[float]
    mmc_incorrect: Optional[float]
    bins: List[ReliabilityBin]
    n_bins: int = 10

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bins"] = [asdict(b) for b in self.bins]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationReport":
        d = dict(d)
        d["bins"] = [ReliabilityBin(**b) for b in d["bins"]]
        return cls(**d)


def calibration_report(records: RecordSet, n_bins: int = 10) -> CalibrationReport:
    p = as_predictions(records)
    value, bins = ece(p, n_bins)
    return CalibrationReport(
        n=len(p),
        accuracy=float(p.correct.mean()),
        ece=value,
        mmc_all=mmc(p, "all"),
        mmc_correct=_mmc_or_none(p, "correct"),
        mmc_incorrect=_mmc_or_none(p, "incorrect"),
        bins=bins,
        n_bins=n_bins,
    )


@dataclass
class RangeGroup:
    lo: float  # -inf for the underflow group
    hi: float  # +inf for the overflow group
    count: int
    low_support: bool
    report: Optional[CalibrationReport]

    @property
    def label(self) -> str:
        return f"[{self.lo:g}, {self.hi:g})"

    @property
    def interior(self) -> bool:
        return math.isfinite(self.lo) and math.isfinite(self.hi)

    def to_dict(self) -> dict:
        return {"lo": self.lo if math.isfinite(self.lo) else None,
                "hi": self.hi if math.isfinite(self.hi) else None, "count": self.count, "low_support": self.low_support,
                "report": None if self.report is None else self.report.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "RangeGroup":
        rep = d.get("report")
        lo = -math.inf if d["lo"] is None else float(d["lo"])
        hi = math.inf if d["hi"] is None else float(d["hi"])
        return cls(lo, hi, int(d["count"]), bool(d["low_support"]),
                   None if rep is None else CalibrationReport.from_dict(rep))


def range_binned_report(records: RecordSet, edges: Sequence[float] = DEFAULT_RANGE_EDGES,
                        n_bins: int = 10, min_count: int = 30) -> List[RangeGroup]:
    """Full reports on half-open range intervals ``[e_i, e_i+1)``.

    The first and last groups collect records below the first edge and at or
    above the last edge. Groups with fewer than ``min_count`` records are
    flagged ``low_support``; empty groups carry no report.
    """
    edges = [float(e) for e in edges]
    if len(edges) < 1 or any(b <= a for a, b in zip(edges, edges[1:])):
        raise InvalidArgument(f"range edges must be strictly increasing, got {edges}")
    p = as_predictions(records)
    bounds = [-math.inf] + edges + [math.inf]
    groups = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        mask = (p.range_m >= lo) & (p.range_m < hi)
        count = int(mask.sum())
        report = calibration_report(p.subset(mask), n_bins) if count else None
        groups.append(RangeGroup(lo, hi, count, count < min_count, report))
    return groups


def bins_to_csv(bins: Sequence[ReliabilityBin]) -> str:
    """The plotting contract: one row per bin."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["lo", "hi", "count", "mean_confidence", "accuracy"])
    for b in bins:
        writer.writerow([repr(b.confidence_lo), repr(b.confidence_hi), b.count,
                         repr(b.mean_confidence), repr(b.accuracy)])
    return buf.getvalue()


def report_to_json(report: CalibrationReport) -> str:
    return json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
