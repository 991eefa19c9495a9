"""Coherent replica combining and the threshold decode decision.

Located replicas are shifted onto the reference slot's sample grid,
counter-rotated by the estimated phase shift, summed with the reference,
matched-filtered and downsampled at the symbol instants.  The SNIR of
the combined symbols is measured data-aided against the (genie-known)
transmitted symbols; decoding succeeds when it clears the modcod decoding
point, with a residual packet error floor of 1e-5 above it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .localization import CorrelationPeak
from .waveform import (
    ChannelState,
    ModCod,
    PulseShape,
    SlotSignal,
    matched_filter,
    matched_symbols,
)

DECODED_PER = 1e-5
SNIR_CAP_DB = 60.0


@dataclass
class CombineResult:
    symbols: np.ndarray
    measured_snir_db: float
    contributors: int


def align_and_correct(replica: SlotSignal, peak: CorrelationPeak) -> np.ndarray:
    """Shift a replica onto the reference grid and undo its phase shift.

    Sample ``n`` of the output is the replica's sample ``n + lag`` rotated by
    ``exp(-j * phase_estimate)``; samples shifted in from beyond the slot are
    zero (only pulse-tail guard samples fall there).
    """
    samples = replica.samples
    lag = peak.lag_samples
    n = len(samples)
    if abs(lag) >= n:
        raise ValueError(f"lag {lag} shifts the window outside the slot")
    out = np.zeros(n, dtype=np.complex128)
    if lag >= 0:
        out[: n - lag] = samples[lag:]
    else:
        out[-lag:] = samples[: n + lag]
    return out * np.exp(-1j * peak.phase_estimate)


def combine(
    reference: SlotSignal,
    aligned,
    pulse: PulseShape,
    n_symbols: int,
    known_symbols: np.ndarray,
    grid_offset: int = 0,
    derotation: ChannelState | None = None,
) -> CombineResult:
    """Sum reference and aligned replicas, matched-filter and downsample.

    ``grid_offset`` is the reference burst's nearest-sample timing (genie
    symbol sync).  ``derotation`` optionally removes the reference burst's
    carrier phase/frequency track from the downsampled symbols before the
    data-aided SNIR measurement, which otherwise cannot follow a rotating
    constellation.
    """
    total = np.array(reference.samples, dtype=np.complex128, copy=True)
    count = 1
    for a in aligned:
        if len(a) != len(total):
            raise ValueError("aligned replica length differs from reference")
        total += a
        count += 1
    filtered = matched_filter(total, pulse)
    symbols = matched_symbols(filtered, pulse, n_symbols, grid_offset)
    if derotation is not None:
        ts = pulse.symbol_period
        t = np.arange(n_symbols) * ts + grid_offset * pulse.sample_period
        symbols = symbols * np.exp(
            -1j * (derotation.phase + 2 * np.pi * derotation.freq_offset * t)
        )
    snir = measure_snir(symbols, known_symbols)
    return CombineResult(symbols=symbols, measured_snir_db=snir, contributors=count)


def measure_snir(symbols: np.ndarray, known: np.ndarray) -> float:
    """Data-aided SNIR estimate in dB, capped at +60.

    Projects the received symbols onto the unit-energy known sequence; the
    signal power is the squared projection coefficient and the noise power
    is the variance of what remains.  Insensitive to a constant phase.
    """
    symbols = np.asarray(symbols)
    known = np.asarray(known)
    if len(symbols) != len(known) or len(symbols) == 0:
        raise ValueError("symbol sequences must have equal nonzero length")
    known_energy = float(np.mean(np.abs(known) ** 2))
    if known_energy < 1e-12:
        raise ValueError("known sequence has no energy")
    coeff = np.vdot(known, symbols) / (len(known) * known_energy)
    p_signal = abs(coeff) ** 2 * known_energy
    residual = symbols - coeff * known
    p_noise = float(np.mean(np.abs(residual) ** 2))
    if p_noise <= p_signal * 10.0 ** (-SNIR_CAP_DB / 10.0):
        return SNIR_CAP_DB
    return 10.0 * math.log10(p_signal / p_noise)


def decode_decision(snir_db: float, modcod: ModCod, rng: np.random.Generator | None = None) -> bool:
    """Threshold decoder abstraction.

    At or above the decoding point the packet fails only with probability
    ``DECODED_PER``; below it decoding always fails.  Pass ``rng=None`` for
    a fully deterministic decision (no residual error floor).
    """
    if snir_db < modcod.decode_threshold_db:
        return False
    if rng is None:
        return True
    return bool(rng.random() >= DECODED_PER)
