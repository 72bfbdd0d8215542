"""Proximity sensor model and calibration fitting.

The sensor sits on the middle stand below the plate and measures the
distance from its face to the plate. That distance shrinks as the load
pushes the plate down, i.e. it moves opposite to the magnet gap:

    distance = standoff - gap
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DomainError


@dataclass(frozen=True)
class SensorCurve:
    gain: float = 2.0  # V/mm
    offset: float = 0.0  # V
    linear_lo: float = 2.0  # mm
    linear_hi: float = 5.0  # mm
    noise_sigma: float = 0.0  # V
    standoff: float = 6.0  # mm, magnet face to sensor face minus plate thickness

    def __post_init__(self):
        if not self.linear_lo < self.linear_hi:
            raise DomainError(
                f"linear_lo ({self.linear_lo}) must be < linear_hi ({self.linear_hi})"
            )
        if self.gain == 0:
            raise DomainError("sensor gain must be nonzero")
        if not self.noise_sigma >= 0:
            raise DomainError(f"noise_sigma must be >= 0, got {self.noise_sigma}")

    def distance(self, gap):
        return self.standoff - gap

    def voltage(self, distance):
        """Noise-free affine map, without clamping."""
        return self.gain * distance + self.offset


@dataclass(frozen=True)
class SensorReading:
    voltage: float
    in_range: bool


@dataclass(frozen=True)
class CalibrationSample:
    gap: float  # mm, sensor-face distance
    voltage: float

    def __post_init__(self):
        if not self.gap > 0:
            raise DomainError(f"calibration gap must be > 0, got {self.gap}")


@dataclass(frozen=True)
class CalibrationFit:
    curve: SensorCurve
    max_residual: float
    n_used: int
    degraded: bool = False


def read(distance, curve, rng=None):
    """Sensor output for a face-to-plate ``distance`` in mm.

    Outside ``[linear_lo, linear_hi]`` the output is held at the nearer
    boundary value and flagged; noise (``rng`` is a numpy Generator) is
    only added inside the range.
    """
    if not distance > 0:
        raise DomainError(f"sensor distance must be > 0, got {distance}")
    if distance < curve.linear_lo:
        return SensorReading(curve.voltage(curve.linear_lo), False)
    if distance > curve.linear_hi:
        return SensorReading(curve.voltage(curve.linear_hi), False)
    v = curve.gain * distance + curve.offset
    if curve.noise_sigma > 0 and rng is not None:
        v += curve.noise_sigma * rng.standard_normal()
    return SensorReading(v, True)


def _window_fits(x, y, length):
    """Affine least-squares fit of every contiguous window of ``length`` samples.

    Returns (max_abs_residual, slope), one entry per start index.
    """
    xs = sliding_window_view(x, length)
    ys = sliding_window_view(y, length)
    xm = xs.mean(axis=1, keepdims=True)
    ym = ys.mean(axis=1, keepdims=True)
    dx = xs - xm
    sxx = (dx * dx).sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = (dx * (ys - ym)).sum(axis=1, keepdims=True) / sxx
    resid = ys - ym - slope * dx
    max_res = np.abs(resid).max(axis=1)
    max_res[~np.isfinite(slope[:, 0])] = np.inf
    return max_res, slope[:, 0]


def fit_calibration(samples, residual_tol=None, curve_template=None, min_rise=0.2):
    """Fit an affine sensor curve on the longest run of samples that is linear.

    Samples are sorted by gap. The window is the longest contiguous run of
    at least three samples whose own affine fit keeps every residual below
    ``residual_tol`` (default: 2% of the voltage span of all samples) and
    whose fitted voltage rise is at least ``min_rise`` of that span, which
    keeps a saturated plateau from passing as the linear range. Ties on
    length go to the smaller residual. If no run qualifies, every sample is
    fitted and the result is marked degraded.

    Window edges are resolved to the sample spacing within the tolerance:
    samples just past a knee can be absorbed when they deviate by less than
    ``residual_tol``.
    """
    if curve_template is None:
        curve_template = SensorCurve()
    pts = sorted(samples, key=lambda s: (s.gap, s.voltage))
    x = np.array([s.gap for s in pts], dtype=float)
    y = np.array([s.voltage for s in pts], dtype=float)
    if len(np.unique(x)) < 2:
        raise DomainError("calibration needs at least two distinct gaps")
    span = float(y.max() - y.min())
    if residual_tol is None:
        residual_tol = 0.02 * span

    lo, hi, degraded = 0, len(x), False
    if len(x) >= 3:
        found = False
        for length in range(len(x), 2, -1):
            max_res, slope = _window_fits(x, y, length)
            xs = sliding_window_view(x, length)
            rise = np.abs(slope) * (xs[:, -1] - xs[:, 0])
            ok = np.flatnonzero((max_res < residual_tol) & (rise >= min_rise * span))
            if ok.size:
                start = int(ok[np.argmin(max_res[ok])])
                lo, hi = start, start + length
                found = True
                break
        degraded = not found

    xw, yw = x[lo:hi], y[lo:hi]
    design = np.column_stack([xw, np.ones_like(xw)])
    (gain, offset), *_ = np.linalg.lstsq(design, yw, rcond=None)
    resid = yw - (gain * xw + offset)
    curve = SensorCurve(
        gain=float(gain),
        offset=float(offset),
        linear_lo=float(xw.min()),
        linear_hi=float(xw.max()),
        noise_sigma=curve_template.noise_sigma,
        standoff=curve_template.standoff,
    )
    return CalibrationFit(curve, float(np.abs(resid).max()), int(hi - lo), degraded)


def load_samples(path):
    """Read calibration samples from a ``gap_mm,voltage_v`` CSV file."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"gap_mm", "voltage_v"} <= set(reader.fieldnames):
            raise DomainError(f"{path}: expected header 'gap_mm,voltage_v'")
        samples = []
        for lineno, row in enumerate(reader, start=2):
            try:
                samples.append(CalibrationSample(float(row["gap_mm"]), float(row["voltage_v"])))
            except (TypeError, ValueError) as exc:
                raise DomainError(f"{path}, line {lineno}: {exc}") from None
        return samples
