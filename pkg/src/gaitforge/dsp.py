"""Signal processing: filtering, resampling, synchronization, segmentation.

Everything here is a pure function on numpy arrays (float64); no shared
state, safe to parallelize across trials.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import InsoleStream, MocapStream


@dataclass(frozen=True)
class BiquadCascade:
    """Second-order IIR sections (b0, b1, b2, a1, a2), a0 normalized to 1."""

    sections: tuple[tuple[float, float, float, float, float], ...]
    order: int
    cutoff_hz: float
    rate_hz: float

    def __post_init__(self):
        if self.order % 2 != 0 or self.order != 2 * len(self.sections):
            raise ValueError("order must be even and match section count")
        for b0, b1, b2, a1, a2 in self.sections:
            # Stability triangle: both poles strictly inside the unit circle.
            if not (abs(a2) < 1.0 and abs(a1) < 1.0 + a2):
                raise ValueError(f"unstable section a1={a1}, a2={a2}")

    def dc_gain(self) -> float:
        g = 1.0
        for b0, b1, b2, a1, a2 in self.sections:
            g *= (b0 + b1 + b2) / (1.0 + a1 + a2)
        return g


def butterworth_lowpass(cutoff_hz: float, rate_hz: float, order: int = 4) -> BiquadCascade:
    """Design a lowpass Butterworth as cascaded biquads.

    Standard pole placement via the bilinear transform with frequency
    prewarping; each section is scaled for unity DC gain.

    Raises:
        ValueError: cutoff not in (0, rate/2), or odd order.
    """
    if order < 2 or order % 2 != 0:
        raise ValueError("order must be a positive even integer")
    if not (0.0 < cutoff_hz < rate_hz / 2.0):
        raise ValueError(f"cutoff {cutoff_hz} Hz must be in (0, {rate_hz / 2}) (Nyquist)")

    warped = 2.0 * rate_hz * math.tan(math.pi * cutoff_hz / rate_hz)
    sections = []
    # Analog prototype poles in conjugate pairs on the left unit semicircle.
    for k in range(order // 2):
        theta = math.pi * (2 * k + 1 + order) / (2 * order)
        pole = warped * complex(math.cos(theta), math.sin(theta))
        z = (2.0 * rate_hz + pole) / (2.0 * rate_hz - pole)
        a1 = -2.0 * z.real
        a2 = abs(z) ** 2
        gain = (1.0 + a1 + a2) / 4.0  # two zeros at z = -1, unity at DC
        sections.append((gain, 2.0 * gain, gain, a1, a2))
    return BiquadCascade(sections=tuple(sections), order=order,
                         cutoff_hz=cutoff_hz, rate_hz=rate_hz)


def _steady_state_zi(section) -> tuple[float, float]:
    # Direct-form-II-transposed state for a unit-step input at unity DC gain.
    b0, b1, b2, a1, a2 = section
    k = (b0 + b1 + b2) / (1.0 + a1 + a2)
    return k - b0, b2 - a2 * k


def _biquad(x: np.ndarray, section, zi_scale: float) -> np.ndarray:
    b0, b1, b2, a1, a2 = section
    z1, z2 = _steady_state_zi(section)
    z1 *= zi_scale
    z2 *= zi_scale
    y = np.empty_like(x)
    for n in range(x.shape[0]):
        xn = x[n]
        yn = b0 * xn + z1
        z1 = b1 * xn - a1 * yn + z2
        z2 = b2 * xn - a2 * yn
        y[n] = yn
    return y


def _sos_pass(x: np.ndarray, filt: BiquadCascade) -> np.ndarray:
    for section in filt.sections:
        x = _biquad(x, section, zi_scale=x[0])
    return x


def filtfilt(signal: np.ndarray, filt: BiquadCascade) -> np.ndarray:
    """Zero-phase (forward-backward) filtering; output length equals input.

    Edges are handled by odd reflection padding of length 3 x filter order,
    with steady-state initial conditions per section.
    """
    x = np.asarray(signal, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("signal must be one-dimensional")
    pad = 3 * filt.order
    if x.shape[0] <= pad:
        raise ValueError(f"signal too short: need more than {pad} samples")

    ext = np.concatenate([
        2.0 * x[0] - x[pad:0:-1],
        x,
        2.0 * x[-1] - x[-2:-pad - 2:-1],
    ])
    ext = _sos_pass(ext, filt)
    ext = _sos_pass(ext[::-1], filt)[::-1]
    return ext[pad:pad + x.shape[0]].copy()


def resample_linear(series: np.ndarray, src_rate: float, dst_rate: float) -> np.ndarray:
    """Resample by linear interpolation on the source time grid.

    The output covers the same span, starting at the same instant; works on
    1-D series or (n, channels) arrays.
    """
    x = np.asarray(series, dtype=np.float64)
    if src_rate <= 0 or dst_rate <= 0:
        raise ValueError("rates must be positive")
    n = x.shape[0]
    if n < 2:
        raise ValueError("need at least 2 samples to resample")
    m = int(math.floor((n - 1) * dst_rate / src_rate + 1e-9)) + 1
    positions = np.arange(m) * (src_rate / dst_rate)
    src_idx = np.arange(n, dtype=np.float64)
    if x.ndim == 1:
        return np.interp(positions, src_idx, x)
    return np.stack([np.interp(positions, src_idx, x[:, c])
                     for c in range(x.shape[1])], axis=1)


def xcorr_lag(a: np.ndarray, b: np.ndarray, max_lag: int) -> int:
    """Lag (samples) maximizing normalized cross-correlation of ``a`` and ``b``.

    Positive lag means ``b`` is a delayed copy of ``a`` (b[t] ~ a[t - lag]).
    The lag is searched over [-max_lag, max_lag] with per-overlap mean
    removal and normalization; ties break toward smaller ``|lag|``.

    Raises:
        ValueError: series shorter than ``max_lag + 1``, or zero variance
            ("degenerate signal").
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if a.shape[0] <= max_lag or b.shape[0] <= max_lag:
        raise ValueError("series must be longer than max_lag")
    if np.std(a) <= 1e-12 * max(1.0, abs(float(np.mean(a)))) or \
       np.std(b) <= 1e-12 * max(1.0, abs(float(np.mean(b)))):
        raise ValueError("degenerate signal")

    best_lag = 0
    best_corr = -np.inf
    for lag in sorted(range(-max_lag, max_lag + 1), key=lambda l: (abs(l), l)):
        i0 = max(0, -lag)
        i1 = min(a.shape[0], b.shape[0] - lag)
        if i1 - i0 < 2:
            continue
        seg_a = a[i0:i1] - a[i0:i1].mean()
        seg_b = b[i0 + lag:i1 + lag] - b[i0 + lag:i1 + lag].mean()
        denom = np.linalg.norm(seg_a) * np.linalg.norm(seg_b)
        if denom <= 0.0:
            continue
        corr = float(seg_a @ seg_b) / denom
        if corr > best_corr:
            best_corr = corr
            best_lag = lag
    if not np.isfinite(best_corr):
        raise ValueError("degenerate signal")
    return best_lag


SYNC_RATE_HZ = 200.0  # cross-correlation grid; quantizes offsets to 5 ms


def sync_streams(insole: InsoleStream, mocap: MocapStream,
                 max_offset_s: float = 1.0) -> int:
    """Estimated clock offset of the insole stream, in microseconds.

    Resamples total insole vertical force and mocap vertical GRF onto a
    common 200 Hz grid over their overlap and cross-correlates. A positive
    result means the insole clock runs ahead: subtracting it from the insole
    timestamps aligns the streams.

    Raises:
        ValueError: overlap shorter than 1 s, or degenerate (constant) force.
    """
    lo = max(insole.t[0], mocap.t[0])
    hi = min(insole.t[-1], mocap.t[-1])
    if hi - lo < 1_000_000:
        raise ValueError("streams overlap less than 1 s")
    step_us = 1e6 / SYNC_RATE_HZ
    n = int((hi - lo) / step_us) + 1
    grid = lo + np.arange(n) * step_us

    insole_f = np.interp(grid, insole.t.astype(np.float64), insole.total_vertical_force())
    mocap_f = np.interp(grid, mocap.t.astype(np.float64), mocap.grf_z)

    max_lag = min(n - 1, int(round(max_offset_s * SYNC_RATE_HZ)))
    lag = xcorr_lag(mocap_f, insole_f, max_lag)
    return int(round(lag * step_us))


@dataclass(frozen=True)
class StrideBounds:
    """Half-open sample index range [start_idx, end_idx) of one stride/cycle."""

    start_idx: int
    end_idx: int

    def __post_init__(self):
        if not self.start_idx < self.end_idx:
            raise ValueError("start_idx must be < end_idx")


def detect_strides(vertical_force: np.ndarray, rate: float,
                   threshold: float = 20.0, hysteresis: float = 10.0,
                   min_duration_s: float = 0.3,
                   max_duration_s: float = 3.0) -> list[StrideBounds]:
    """Segment strides from a vertical-force series via onset detection.

    A foot-contact onset is a rising crossing of ``threshold`` after the
    force previously dropped below ``threshold - hysteresis``; a stride spans
    consecutive onsets. Strides outside [min_duration_s, max_duration_s] are
    discarded. May return an empty list.
    """
    f = np.asarray(vertical_force, dtype=np.float64)
    low = threshold - hysteresis
    onsets = []
    armed = bool(f[0] < low) if f.size else False
    for i in range(f.shape[0]):
        v = f[i]
        if armed and v > threshold:
            onsets.append(i)
            armed = False
        elif not armed and v < low:
            armed = True
    strides = []
    for s, e in zip(onsets[:-1], onsets[1:]):
        duration = (e - s) / rate
        if min_duration_s <= duration <= max_duration_s:
            strides.append(StrideBounds(s, e))
    return strides


def knee_cycles(knee_angle_deg: np.ndarray, rate: float,
                threshold_deg: float = 75.0,
                min_duration_s: float = 0.5,
                max_duration_s: float = 10.0) -> list[StrideBounds]:
    """Segment sit/stand cycles from a knee-angle series.

    Foot force never unloads during chair transfers, so cycles are cut on
    knee flexion instead: a cycle spans a rising crossing of
    ``threshold_deg`` (onset) to the next falling crossing (end).
    """
    a = np.asarray(knee_angle_deg, dtype=np.float64)
    cycles = []
    start = None
    for i in range(1, a.shape[0]):
        if a[i - 1] < threshold_deg <= a[i]:
            start = i
        elif start is not None and a[i - 1] >= threshold_deg > a[i]:
            duration = (i - start) / rate
            if min_duration_s <= duration <= max_duration_s:
                cycles.append(StrideBounds(start, i))
            start = None
    return cycles


def time_normalize(segment: np.ndarray, n_points: int = 101) -> np.ndarray:
    """Linearly rescale a segment to ``n_points`` samples (0..100% of span).

    Endpoints are preserved exactly; works on 1-D series or (n, channels).
    Idempotent when the input already has ``n_points`` samples.
    """
    x = np.asarray(segment, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ValueError("segment must have at least 2 samples")
    positions = np.linspace(0.0, n - 1, n_points)
    src_idx = np.arange(n, dtype=np.float64)
    if x.ndim == 1:
        return np.interp(positions, src_idx, x)
    return np.stack([np.interp(positions, src_idx, x[:, c])
                     for c in range(x.shape[1])], axis=1)


def knee_angle(hip, knee, ankle) -> float:
    """Knee flexion angle in degrees from three joint positions.

    Flexion = 180 deg minus the interior angle at the knee between the
    (hip - knee) and (ankle - knee) segments; 0 deg is a straight leg.
    Points may be 2-D or 3-D (pose keypoints usually carry x, y only).

    Raises:
        ValueError: knee coincides with hip or ankle (distance <= 1e-6).
    """
    hip = np.asarray(hip, dtype=np.float64)
    knee = np.asarray(knee, dtype=np.float64)
    ankle = np.asarray(ankle, dtype=np.float64)
    v1 = hip - knee
    v2 = ankle - knee
    n1 = np.linalg.norm(v1)
    n2 = np.linalg.norm(v2)
    if n1 <= 1e-6 or n2 <= 1e-6:
        raise ValueError("degenerate points: knee coincides with hip or ankle")
    cos_interior = float(np.clip(v1 @ v2 / (n1 * n2), -1.0, 1.0))
    flexion = 180.0 - math.degrees(math.acos(cos_interior))
    return min(max(flexion, 0.0), 180.0)


def window_slices(length: int, window: int, overlap: int) -> list[tuple[int, int]]:
    """Sliding-window [start, end) index pairs with the given overlap.

    Windows start at multiples of ``window - overlap``; the last window ends
    at or before ``length``. Returns an empty list when the series is
    shorter than one window.
    """
    if window <= 0 or overlap < 0 or overlap >= window:
        raise ValueError("need window > overlap >= 0")
    if length < window:
        return []
    stride = window - overlap
    count = (length - window) // stride + 1
    return [(i * stride, i * stride + window) for i in range(count)]
