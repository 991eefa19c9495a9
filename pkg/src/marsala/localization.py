"""Replica localization by cross-correlation against a reference timeslot.

The MARSALA receiver anchors on one slot (the localized slot with the
lowest total power), correlates its signal against every other slot and
reads replica positions off the correlation peaks.  Peak search stays on
the integer sample grid, so the residual timing error of a detected
replica is uniform within half a sample each side.  The phase of the peak
value estimates the carrier phase shift between the two replicas.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .kernels import cross_correlation_window
from .waveform import SlotSignal


class LocalizationError(RuntimeError):
    """Fewer correlation peaks above threshold than expected replicas."""


@dataclass
class CorrelationSeries:
    lags: np.ndarray
    values: np.ndarray


@dataclass
class CorrelationPeak:
    """Strongest correlation lag, its complex value and the implied phase."""

    lag_samples: int
    peak_value: complex
    phase_estimate: float
    timing_error_bound: float = math.nan
    slot_index: int | None = None

    @property
    def magnitude(self) -> float:
        return abs(self.peak_value)


@dataclass(frozen=True)
class SyncErrorModel:
    """Residual synchronization errors left after grid-aligned localization.

    The reference burst is aligned to its nearest sample, leaving a residual
    offset uniform on +-Ts/(2Q).  A detected replica adds its own
    grid-quantization error, also uniform on +-Ts/(2Q); their sum is
    triangular on +-Ts/Q.  The phase estimate carries a zero-mean error of
    variance ``phase_err_variance``, empirically Gaussian.
    """

    symbol_period: float = 1.0
    oversampling: int = 4
    phase_err_variance: float = 0.0

    def __post_init__(self):
        if self.phase_err_variance < 0 or not math.isfinite(self.phase_err_variance):
            raise ValueError("phase_err_variance must be finite and >= 0")

    @property
    def timing_half_width(self) -> float:
        return self.symbol_period / (2 * self.oversampling)

    def draw_reference_offset(self, rng: np.random.Generator) -> float:
        return rng.uniform(-self.timing_half_width, self.timing_half_width)

    def draw_peak_timing_error(self, rng: np.random.Generator) -> float:
        return rng.uniform(-self.timing_half_width, self.timing_half_width)

    def draw_replica_offset(self, rng: np.random.Generator) -> float:
        """Total replica-branch residual: triangular on +-Ts/Q."""
        return self.draw_reference_offset(rng) + self.draw_peak_timing_error(rng)

    def draw_phase_error(self, rng: np.random.Generator) -> float:
        return rng.normal(0.0, math.sqrt(self.phase_err_variance))


def _as_samples(signal) -> np.ndarray:
    return signal.samples if isinstance(signal, SlotSignal) else np.asarray(signal)


def cross_correlate(reference, candidate, lag_window) -> CorrelationSeries:
    """Normalized inner products of the candidate with the lag-shifted reference.

    ``lag_window`` is an inclusive ``(lag_min, lag_max)`` pair or a range.
    The value at lag d is ``mean_t(candidate[t] * conj(reference[t - d]))``
    over the overlap of the two signals.
    """
    if isinstance(reference, SlotSignal) and isinstance(candidate, SlotSignal):
        if reference.sample_rate != candidate.sample_rate:
            raise ValueError("signals must share one sample rate")
    ref = _as_samples(reference)
    cand = _as_samples(candidate)
    if isinstance(lag_window, range):
        lag_min, lag_max = lag_window.start, lag_window.stop - 1
    else:
        lag_min, lag_max = lag_window
    if lag_max < lag_min:
        raise ValueError("empty lag window")
    lags, values = cross_correlation_window(cand, ref, int(lag_min), int(lag_max))
    return CorrelationSeries(lags=lags, values=values)


def detect_peak(series: CorrelationSeries, sample_period: float | None = None) -> CorrelationPeak:
    """Lag of maximal correlation magnitude; ties break toward the smallest lag."""
    if len(series.values) == 0:
        raise ValueError("empty correlation series")
    i = int(np.argmax(np.abs(series.values)))
    value = complex(series.values[i])
    bound = sample_period / 2.0 if sample_period is not None else math.nan
    return CorrelationPeak(
        lag_samples=int(series.lags[i]),
        peak_value=value,
        phase_estimate=float(np.angle(value)),
        timing_error_bound=bound,
    )


def select_reference(candidate_slot_powers) -> int:
    """Slot index with the lowest total power; ties toward the smallest index."""
    pairs = list(candidate_slot_powers)
    if not pairs:
        raise ValueError("no candidate slots")
    for slot, power in pairs:
        if power < 0:
            raise ValueError(f"negative power on slot {slot}")
    return min(pairs, key=lambda sp: (sp[1], sp[0]))[0]


def localize_replicas(
    frame_signals,
    ref_slot: int,
    expected_count: int,
    detection_threshold: float = 0.5,
    nominal_power: float = 1.0,
    lag_halfwidth: int = 10,
    sample_period: float | None = None,
) -> list[CorrelationPeak]:
    """Find the slots carrying replicas of the reference-slot packet.

    Correlates the reference slot against every other slot and keeps peaks
    whose magnitude exceeds ``detection_threshold * nominal_power``, where
    ``nominal_power`` is the expected sample power of one received burst
    (all packets are equi-powered).  Returns the ``expected_count``
    strongest peaks, each annotated with its slot; raises
    :class:`LocalizationError` when fewer qualify.
    """
    if expected_count < 1:
        raise ValueError("expected_count must be >= 1")
    signals = list(frame_signals)
    reference = signals[ref_slot]
    window = (-lag_halfwidth, lag_halfwidth)
    found: list[CorrelationPeak] = []
    for slot, candidate in enumerate(signals):
        if slot == ref_slot:
            continue
        series = cross_correlate(reference, candidate, window)
        peak = detect_peak(series, sample_period)
        if peak.magnitude > detection_threshold * nominal_power:
            peak.slot_index = slot
            found.append(peak)
    found.sort(key=lambda p: (-p.magnitude, p.slot_index))
    if len(found) < expected_count:
        raise LocalizationError(
            f"found {len(found)} replica peaks above threshold, expected {expected_count}"
        )
    return found[:expected_count]
