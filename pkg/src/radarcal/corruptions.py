"""Seven spectra corruptions at three severities.

Every corruption has one strength parameter that is multiplied by 1, 2 or 4
for severities 1, 2 and 3. Where a corruption needs the noise level it is
estimated from the sample itself: ROI pixels are mostly noise, and the median
of exponential noise with mean m is m * ln 2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from radarcal.errors import InvalidArgument
from radarcal.synth import FWHM_PER_SIGMA, RoiSample

KINDS = (
    "speckle",
    "additive-noise-floor",
    "attenuation",
    "occlusion",
    "blur",
    "ghost-peaks",
    "clipping",
)
SEVERITY_SCALE = {1: 1.0, 2: 2.0, 3: 4.0}

# Base strengths, scaled by SEVERITY_SCALE.
SPECKLE_VARIANCE = 0.25
NOISE_FLOOR_RISE = 1.0  # added noise mean, in units of the estimated floor
ATTENUATION_DB = 6.0  # per severity unit: 6, 12, 24 dB
OCCLUSION_AREA = 0.1
BLUR_SIGMA = 0.5  # pixels
GHOST_COUNT = 1
CLIP_DB = 6.0  # clip level below the peak


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown corruption kind {self.kind!r}; expected one of {KINDS}")
        if self.severity not in SEVERITY_SCALE:
            raise InvalidArgument(f"severity must be 1, 2 or 3, got {self.severity}")

    @property
    def scale(self) -> float:
        return SEVERITY_SCALE[self.severity]


def attenuation_factor(severity: int) -> float:
    return 10.0 ** (-ATTENUATION_DB * SEVERITY_SCALE[severity] / 10.0)


def _noise_estimate(x: np.ndarray) -> float:
    return float(np.median(x)) / math.log(2.0)


def _speckle(x, m, rng):
    var = SPECKLE_VARIANCE * m
    return x * rng.gamma(1.0 / var, var, size=x.shape)


def _noise_floor(x, m, rng):
    return x + rng.exponential(NOISE_FLOOR_RISE * m * _noise_estimate(x), size=x.shape)


def _attenuation(x, m, rng):
    return x * 10.0 ** (-ATTENUATION_DB * m / 10.0)


def _occlusion(x, m, rng):
    H, W = x.shape
    side_h = max(1, min(H, round(H * math.sqrt(OCCLUSION_AREA * m))))
    side_w = max(1, min(W, round(W * math.sqrt(OCCLUSION_AREA * m))))
    r0 = int(rng.integers(0, H - side_h + 1))
    c0 = int(rng.integers(0, W - side_w + 1))
    out = x.copy()
    out[r0:r0 + side_h, c0:c0 + side_w] = rng.exponential(
        _noise_estimate(x), size=(side_h, side_w))
    return out


def _blur(x, m, rng):
    return gaussian_filter(x, sigma=BLUR_SIGMA * m, mode="nearest")


def _ghost_peaks(x, m, rng):
    H, W = x.shape
    n = int(GHOST_COUNT * m)
    peak = float(x.max())
    amps = rng.uniform(0.25, 1.0, size=n) * peak
    rows = rng.uniform(0, H - 1, size=n)
    cols = rng.uniform(0, W - 1, size=n)
    sigma = 1.5 / FWHM_PER_SIGMA
    yy, xx = np.mgrid[0:H, 0:W]
    out = x.copy()
    for a, r, c in zip(amps, rows, cols):
        d2 = ((yy - r) ** 2 + (xx - c) ** 2) / sigma**2
        out += np.where(d2 <= 4.0, a * np.exp(-0.5 * d2), 0.0)
    return out


def _clipping(x, m, rng):
    return np.minimum(x, float(x.max()) * 10.0 ** (-CLIP_DB * m / 10.0))


_APPLY = {
    "speckle": _speckle,
    "additive-noise-floor": _noise_floor,
    "attenuation": _attenuation,
    "occlusion": _occlusion,
    "blur": _blur,
    "ghost-peaks": _ghost_peaks,
    "clipping": _clipping,
}


def corrupt(sample: RoiSample, spec: CorruptionSpec, rng: np.random.Generator) -> RoiSample:
    """Return a corrupted copy; range and class are left untouched."""
    if not isinstance(spec, CorruptionSpec):
        raise InvalidArgument(f"expected a CorruptionSpec, got {type(spec).__name__}")
    out = _APPLY[spec.kind](sample.pixels, spec.scale, rng)
    return sample.with_pixels(np.maximum(out, 0.0))


def relative_change(original: RoiSample, corrupted: RoiSample) -> float:
    """Mean relative pixel change: sum |x' - x| / sum x."""
    return float(np.abs(corrupted.pixels - original.pixels).sum() / original.pixels.sum())
