"""Synthetic range-azimuth ROI spectra.

Each ROI is a small linear-power patch holding one object. The object is a
handful of point scatterers whose received peak power follows the point-target
radar range equation, ``P = K * rcs / R**4``, on top of an exponential noise
floor (the power of a complex Gaussian). Near, reflective objects produce many
bright peaks; far or weakly reflecting ones sink into the noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np

from radarcal.errors import InvalidArgument

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


@dataclass(frozen=True)
class ClassSpec:
    """Reflectivity model of one object class.

    ``rcs_mean`` is the expected RCS of the whole object; it is shared among
    the object's scatterers. ``layout`` holds (range, azimuth) pixel offsets
    from the ROI centre at which scatterers may sit. An empty layout places
    scatterers uniformly at random over the ROI.
    """

    class_id: int
    name: str
    scatterer_count_range: Tuple[int, int]
    rcs_mean: float
    rcs_spread: float = 0.0
    layout: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        lo, hi = self.scatterer_count_range
        if lo < 1 or lo > hi:
            raise InvalidArgument(
                f"class {self.name!r}: scatterer_count_range must satisfy 1 <= min <= max, "
                f"got {self.scatterer_count_range}"
            )
        if not self.rcs_mean > 0:
            raise InvalidArgument(f"class {self.name!r}: rcs_mean must be > 0")
        if self.rcs_spread < 0:
            raise InvalidArgument(f"class {self.name!r}: rcs_spread must be >= 0")
        if self.layout and len(self.layout) < hi:
            raise InvalidArgument(
                f"class {self.name!r}: layout has {len(self.layout)} anchors, "
                f"fewer than max scatterer count {hi}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["scatterer_count_range"] = list(self.scatterer_count_range)
        d["layout"] = [list(a) for a in self.layout]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSpec":
        return cls(
            class_id=int(d["class_id"]),
            name=str(d["name"]),
            scatterer_count_range=tuple(int(v) for v in d["scatterer_count_range"]),
            rcs_mean=float(d["rcs_mean"]),
            rcs_spread=float(d.get("rcs_spread", 0.0)),
            layout=tuple(tuple(float(v) for v in a) for a in d.get("layout", ())),
        )


@dataclass(frozen=True)
class GeneratorConfig:
    """Physical and rendering constants of the generator.

    ``azimuth_reference_range`` models fixed angular resolution: beyond that
    range the azimuth offsets of an object's scatterers shrink like 1/R.
    Set it to ``None`` to disable the effect.
    """

    height: int = 16
    width: int = 16
    noise_floor: float = 1.0
    transmit_constant: float = 1.0
    range_interval: Tuple[float, float] = (3.0, 43.0)
    blob_width_range: Tuple[float, float] = (1.0, 2.0)  # FWHM, pixels
    blob_truncation: float = 2.0  # sigmas
    position_jitter: float = 0.5  # pixels
    azimuth_reference_range: Optional[float] = 15.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise InvalidArgument("pixel grid must be non-empty")
        if not self.noise_floor >= 0:
            raise InvalidArgument("noise_floor must be >= 0")
        if not self.transmit_constant > 0:
            raise InvalidArgument("transmit_constant must be > 0")
        lo, hi = self.range_interval
        if not 0 < lo < hi:
            raise InvalidArgument(f"range_interval must satisfy 0 < lo < hi, got {self.range_interval}")
        wlo, whi = self.blob_width_range
        if not 0 < wlo <= whi:
            raise InvalidArgument("blob_width_range must satisfy 0 < lo <= hi")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["range_interval"] = list(self.range_interval)
        d["blob_width_range"] = list(self.blob_width_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        d = dict(d)
        for key in ("range_interval", "blob_width_range"):
            if key in d:
                d[key] = tuple(float(v) for v in d[key])
        return cls(**d)


@dataclass(frozen=True, eq=False)
class RoiSample:
    pixels: np.ndarray
    range_m: float
    class_id: int
    sample_id: int = 0
    provenance_seed: int = 0

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 2 or px.size == 0:
            raise InvalidArgument("pixels must be a non-empty 2D grid")
        if not np.all(np.isfinite(px)) or np.any(px < 0):
            raise InvalidArgument(f"sample {self.sample_id}: pixels must be finite and >= 0")
        if not self.range_m > 0:
            raise InvalidArgument(f"sample {self.sample_id}: range_m must be > 0")
        if self.class_id < 0:
            raise InvalidArgument(f"sample {self.sample_id}: class_id must be >= 0")

    def with_pixels(self, pixels: np.ndarray) -> "RoiSample":
        return replace(self, pixels=pixels)


DEFAULT_CLASSES = (
    # name, counts, layout (range offset, azimuth offset)
    ("stop sign", (1, 2), ((0, 0), (-2, 0))),
    ("pedestrian", (1, 3), ((0, 0), (2, 1), (-2, -1))),
    ("baby carriage", (2, 3), ((-1, -1), (1, 1), (1, -1))),
    ("bicycle", (2, 4), ((0, -3), (0, 3), (0, 0), (-1, 0))),
    ("construction barrier", (3, 5), ((0, -5), (0, -2), (0, 2), (0, 5), (0, 0))),
    ("motorbike", (3, 6), ((-2, 0), (2, 0), (0, -2), (0, 2), (0, 0), (-1, 1))),
    ("car", (4, 8), ((-3, -3), (-3, 3), (3, -3), (3, 3), (0, -3), (0, 3), (-3, 0), (3, 0))),
)


def default_class_specs() -> list:
    """Seven classes, least to most reflective, RCS log-spaced over two decades."""
    rcs = np.logspace(0.0, 2.0, len(DEFAULT_CLASSES))
    return [
        ClassSpec(
            class_id=i,
            name=name,
            scatterer_count_range=counts,
            rcs_mean=float(r),
            rcs_spread=float(r),
            layout=tuple(tuple(float(v) for v in a) for a in layout),
        )
        for i, ((name, counts, layout), r) in enumerate(zip(DEFAULT_CLASSES, rcs))
    ]


def transmit_constant_for_snr(specs: Sequence[ClassSpec], r_max: float, noise_floor: float,
                              snr_db: float = 3.0) -> float:
    """Transmit constant giving the weakest class the requested mean peak SNR at ``r_max``."""
    per_scatterer = min(s.rcs_mean / (0.5 * sum(s.scatterer_count_range)) for s in specs)
    return 10.0 ** (snr_db / 10.0) * noise_floor * r_max**4 / per_scatterer


def default_physics(specs: Optional[Sequence[ClassSpec]] = None) -> GeneratorConfig:
    specs = default_class_specs() if specs is None else specs
    base = GeneratorConfig()
    k = transmit_constant_for_snr(specs, base.range_interval[1], base.noise_floor)
    return replace(base, transmit_constant=k)


def generate_sample(class_spec: ClassSpec, range_m: float, physics: GeneratorConfig,
                    rng: np.random.Generator, sample_id: int = 0,
                    provenance_seed: int = 0) -> RoiSample:
    """Render one ROI of ``class_spec`` seen at ``range_m``.

    The draw order from ``rng`` is fixed, so a given seed always yields the
    same grid.
    """
    if not range_m > 0:
        raise InvalidArgument(f"range_m must be > 0, got {range_m}")
    lo, hi = physics.range_interval
    if not lo <= range_m <= hi:
        raise InvalidArgument(f"range_m={range_m} outside generating interval {physics.range_interval}")
    H, W = physics.height, physics.width

    pixels = rng.exponential(physics.noise_floor, size=(H, W)) if physics.noise_floor > 0 \
        else np.zeros((H, W))

    n_lo, n_hi = class_spec.scatterer_count_range
    k = int(rng.integers(n_lo, n_hi + 1))
    mean_rcs = class_spec.rcs_mean / k
    cv2 = (class_spec.rcs_spread / class_spec.rcs_mean) ** 2
    if cv2 > 0:
        rcs = rng.gamma(1.0 / cv2, mean_rcs * cv2, size=k)
    else:
        rcs = np.full(k, mean_rcs)
    amplitude = physics.transmit_constant * rcs / range_m**4

    cy, cx = (H - 1) / 2.0, (W - 1) / 2.0
    if class_spec.layout:
        idx = rng.choice(len(class_spec.layout), size=k, replace=False)
        anchors = np.asarray(class_spec.layout, dtype=float)[idx]
        az_scale = 1.0
        if physics.azimuth_reference_range:
            az_scale = min(1.0, physics.azimuth_reference_range / range_m)
        jitter = rng.uniform(-physics.position_jitter, physics.position_jitter, size=(k, 2))
        rows = cy + anchors[:, 0] + jitter[:, 0]
        cols = cx + anchors[:, 1] * az_scale + jitter[:, 1]
    else:
        rows = rng.uniform(0.0, H - 1, size=k)
        cols = rng.uniform(0.0, W - 1, size=k)
    sigma = rng.uniform(*physics.blob_width_range, size=k) / FWHM_PER_SIGMA

    yy, xx = np.mgrid[0:H, 0:W]
    cutoff = physics.blob_truncation**2
    for a, r, c, s in zip(amplitude, rows, cols, sigma):
        d2 = ((yy - r) ** 2 + (xx - c) ** 2) / s**2
        pixels += np.where(d2 <= cutoff, a * np.exp(-0.5 * d2), 0.0)

    return RoiSample(pixels=pixels, range_m=float(range_m), class_id=class_spec.class_id,
                     sample_id=sample_id, provenance_seed=provenance_seed)


def mean_power(sample: RoiSample) -> float:
    """Average linear-scale pixel power of the ROI."""
    return float(np.mean(sample.pixels))
