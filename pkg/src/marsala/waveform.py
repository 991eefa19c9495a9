"""Oversampled baseband synthesis of pulse-shaped bursts and slot signals.

A burst is a train of unit-energy PSK symbols shaped with a root raised
cosine pulse on a grid of Q samples per symbol.  Channel impairments are
baked in at synthesis time: a fractional timing offset moves the pulse
evaluation instants (no sample interpolation), while carrier frequency
offset and phase shift rotate the samples.  A slot signal is the sum of
the impaired bursts of every contributor plus one circular AWGN
realization.

Conventions used throughout the package:

* sample ``n`` of a slot corresponds to time ``t_n = (n - Q*span/2)*Ts/Q``,
  so symbol ``k`` of an unimpaired burst peaks at sample ``Q*span/2 + k*Q``;
* slot signals have ``Q*(L + span)`` samples (pulse tails of ``span/2``
  symbols guard each side, bursts never straddle slots);
* the discrete root-pulse taps are normalized to unit energy, which makes
  the matched-filter cascade equal 1.0 at the symbol instants and lets
  AWGN at symbol-level Es/N0 be drawn with per-sample complex variance
  ``10**(-es_n0_db/10)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .kernels import synthesize_burst

_QPSK_POINTS = np.array([1 + 1j, 1 - 1j, -1 + 1j, -1 - 1j]) / math.sqrt(2.0)
_BPSK_POINTS = np.array([1 + 0j, -1 + 0j])


class UnsupportedModulation(ValueError):
    pass


@dataclass(frozen=True)
class ModCod:
    """Modulation order, code rate and the SNIR decoding point in dB."""

    modulation_order: int = 4
    code_rate: float = 1.0 / 3.0
    decode_threshold_db: float = 0.0

    def __post_init__(self):
        m = self.modulation_order
        if m < 2 or (m & (m - 1)) != 0:
            raise ValueError(f"modulation_order must be a power of two >= 2, got {m}")
        if not 0.0 < self.code_rate <= 1.0:
            raise ValueError(f"code_rate must be in (0, 1], got {self.code_rate}")

    @property
    def bits_per_symbol(self) -> float:
        return self.code_rate * math.log2(self.modulation_order)


@dataclass(frozen=True)
class PulseShape:
    """Root raised cosine shaping on an oversampled grid.

    ``span_symbols`` is the (even) truncation length of the root pulse in
    symbols; the composite transmit+receive response is the raised cosine.
    """

    rolloff: float = 0.2
    span_symbols: int = 40
    oversampling: int = 4
    symbol_period: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rolloff < 1.0:
            raise ValueError(f"rolloff must be in (0, 1), got {self.rolloff}")
        if self.span_symbols < 4 or self.span_symbols % 2:
            raise ValueError(f"span_symbols must be even and >= 4, got {self.span_symbols}")
        if self.oversampling < 2:
            raise ValueError(f"oversampling must be >= 2, got {self.oversampling}")
        if self.symbol_period <= 0.0:
            raise ValueError(f"symbol_period must be > 0, got {self.symbol_period}")

    @property
    def sample_period(self) -> float:
        return self.symbol_period / self.oversampling

    def root_pulse(self, t) -> np.ndarray:
        """Continuous root raised cosine evaluated at times ``t`` (unnormalized).

        Uses the closed form with the removable singularities at t=0 and
        |t| = Ts/(4*rolloff) patched by their limits; zero outside the
        truncated support of +-span/2 symbol periods.
        """
        a = self.rolloff
        x = np.asarray(t, dtype=np.float64) / self.symbol_period
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        inside = np.abs(x) <= self.span_symbols / 2
        at_zero = np.abs(x) < 1e-12
        at_sing = np.abs(np.abs(x) - 1.0 / (4.0 * a)) < 1e-12
        regular = ~(at_zero | at_sing)
        xr = x[regular]
        num = np.sin(np.pi * xr * (1 - a)) + 4 * a * xr * np.cos(np.pi * xr * (1 + a))
        den = np.pi * xr * (1 - (4 * a * xr) ** 2)
        vals = np.zeros_like(x)
        vals[regular] = num / den
        vals[at_zero] = 1 - a + 4 * a / np.pi
        vals[at_sing] = (a / math.sqrt(2)) * (
            (1 + 2 / np.pi) * math.sin(np.pi / (4 * a))
            + (1 - 2 / np.pi) * math.cos(np.pi / (4 * a))
        )
        out = np.where(inside, vals, 0.0)
        return float(out[0]) if scalar else out

    def taps(self, timing_offset: float = 0.0) -> np.ndarray:
        """Root-pulse taps on the sample grid, delayed by ``timing_offset``.

        The grid spans ``span/2 + 1`` symbols each side so offsets up to one
        symbol period stay representable.  Taps are scaled by the zero-offset
        normalization constant (unit energy at zero offset).
        """
        if abs(timing_offset) > self.symbol_period:
            raise ValueError("timing offset beyond one symbol period")
        ext = self.oversampling * (self.span_symbols // 2 + 1)
        m = np.arange(-ext, ext + 1)
        vals = self.root_pulse(m * self.sample_period - timing_offset)
        return vals / _tap_norm(self)

    @property
    def tap_center(self) -> int:
        """Index of the t=0 tap within the array returned by :meth:`taps`."""
        return self.oversampling * (self.span_symbols // 2 + 1)


@lru_cache(maxsize=32)
def _tap_norm(pulse: PulseShape) -> float:
    ext = pulse.oversampling * (pulse.span_symbols // 2 + 1)
    m = np.arange(-ext, ext + 1)
    vals = pulse.root_pulse(m * pulse.sample_period)
    return math.sqrt(float(np.sum(vals * vals)))


def raised_cosine(t, pulse: PulseShape):
    """Composite (root * root) Nyquist response, normalized to 1 at t=0.

    Evaluated with the exact closed form of the raised cosine, handling the
    removable singularity at |t| = Ts/(2*rolloff).
    """
    a = pulse.rolloff
    x = np.asarray(t, dtype=np.float64) / pulse.symbol_period
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    at_sing = np.abs(np.abs(x) - 1.0 / (2.0 * a)) < 1e-12
    regular = ~at_sing
    out = np.empty_like(x)
    xr = x[regular]
    out[regular] = _sinc(np.pi * xr) * np.cos(np.pi * a * xr) / (1 - (2 * a * xr) ** 2)
    out[at_sing] = (np.pi / 4) * _sinc(np.pi / (2 * a))
    return float(out[0]) if scalar else out


def _sinc(x):
    """sin(x)/x with the limit 1 at x=0."""
    return np.sinc(np.asarray(x) / np.pi)


@dataclass(frozen=True)
class ChannelState:
    """Per-burst impairments: timing offset, carrier frequency offset, phase."""

    timing_offset: float = 0.0
    freq_offset: float = 0.0
    phase: float = 0.0

    def validate(self, pulse: PulseShape) -> "ChannelState":
        ts = pulse.symbol_period
        if abs(self.timing_offset) > ts:
            raise ValueError(f"|timing_offset| must be <= {ts}, got {self.timing_offset}")
        if not 0.0 <= self.freq_offset <= 0.01 / ts:
            raise ValueError(f"freq_offset must be in [0, {0.01 / ts}], got {self.freq_offset}")
        if abs(self.phase) > np.pi:
            raise ValueError(f"|phase| must be <= pi, got {self.phase}")
        return self


IDENTITY_CHANNEL = ChannelState()


@dataclass(frozen=True)
class Burst:
    """One transmitted replica: symbols plus the channel it rides through."""

    user_id: int
    replica_index: int
    slot_index: int
    symbols: np.ndarray
    channel: ChannelState = IDENTITY_CHANNEL

    def __post_init__(self):
        e = float(np.mean(np.abs(self.symbols) ** 2))
        if abs(e - 1.0) > 1e-9:
            raise ValueError(f"burst symbols must have unit average energy, got {e}")


@dataclass
class Contributor:
    burst: Burst
    power: float = 1.0


@dataclass
class SlotSignal:
    """Complex baseband samples of one timeslot plus its contributor list."""

    samples: np.ndarray
    sample_rate: float
    contributors: list = field(default_factory=list)

    @property
    def power(self) -> float:
        return float(np.mean(np.abs(self.samples) ** 2))


def generate_symbols(count: int, modcod: ModCod, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` i.i.d. unit-energy constellation points."""
    if count < 1:
        raise ValueError("count must be >= 1")
    if modcod.modulation_order == 4:
        points = _QPSK_POINTS
    elif modcod.modulation_order == 2:
        points = _BPSK_POINTS
    else:
        raise UnsupportedModulation(
            f"modulation order {modcod.modulation_order} not implemented"
        )
    return points[rng.integers(0, len(points), size=count)]


def slot_samples(pulse: PulseShape, n_symbols: int) -> int:
    """Number of samples in a slot carrying ``n_symbols``-symbol bursts."""
    return pulse.oversampling * (n_symbols + pulse.span_symbols)


def symbol_peak_index(pulse: PulseShape, k: int = 0) -> int:
    """Pre-filter sample index where symbol ``k`` of an unimpaired burst peaks."""
    return pulse.oversampling * (pulse.span_symbols // 2) + k * pulse.oversampling


def nominal_burst_power(pulse: PulseShape, n_symbols: int) -> float:
    """Average sample power of one lone unit-energy-symbol burst in its slot."""
    return n_symbols / slot_samples(pulse, n_symbols)


def shape_burst(symbols: np.ndarray, pulse: PulseShape) -> np.ndarray:
    """Convolve the Q-upsampled symbol train with the root pulse."""
    if len(symbols) < 1:
        raise ValueError("need at least one symbol")
    q = pulse.oversampling
    n_out = slot_samples(pulse, len(symbols))
    # taps grid carries one extra symbol of margin each side; shift it out
    return synthesize_burst(symbols, pulse.taps(0.0), q, n_out, q, 0.0, 0.0)


def apply_channel(symbols: np.ndarray, channel: ChannelState, pulse: PulseShape) -> np.ndarray:
    """Synthesize an impaired burst.

    The timing offset delays the burst by re-evaluating the root pulse at
    shifted instants; frequency offset and phase then rotate each sample
    by ``exp(j*(phase + 2*pi*freq_offset*t_n))`` with ``t_n`` the absolute
    slot time of sample ``n``.
    """
    channel.validate(pulse)
    q = pulse.oversampling
    n_out = slot_samples(pulse, len(symbols))
    dphi = 2 * np.pi * channel.freq_offset * pulse.sample_period
    phase0 = channel.phase - dphi * symbol_peak_index(pulse, 0)
    if dphi == 0.0:
        phase0 = channel.phase
    return synthesize_burst(
        symbols, pulse.taps(channel.timing_offset), q, n_out, q, phase0, dphi
    )


def add_awgn(samples: np.ndarray, es_n0_db, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex AWGN calibrated to a symbol-level Es/N0.

    Because the root-pulse taps have unit energy, matched filtering leaves
    the per-symbol noise variance equal to the per-sample variance, so the
    per-sample complex variance is simply ``10**(-es_n0_db/10)``.  ``None``
    or ``+inf`` disables noise.
    """
    if es_n0_db is None or math.isinf(es_n0_db):
        return np.array(samples, dtype=np.complex128, copy=True)
    var = 10.0 ** (-es_n0_db / 10.0)
    noise = rng.standard_normal(len(samples)) + 1j * rng.standard_normal(len(samples))
    return np.asarray(samples, dtype=np.complex128) + noise * math.sqrt(var / 2.0)


def compose_slot(
    bursts,
    es_n0_db,
    pulse: PulseShape,
    rng: np.random.Generator,
    n_symbols: int | None = None,
    powers=None,
) -> SlotSignal:
    """Sum the impaired bursts sharing a slot and add one AWGN realization.

    ``powers`` optionally scales each burst's power (used for residual
    interference after cancellation); default is equal unit power.
    """
    bursts = list(bursts)
    if bursts:
        if n_symbols is None:
            n_symbols = len(bursts[0].symbols)
        slots = {b.slot_index for b in bursts}
        if len(slots) != 1:
            raise ValueError(f"bursts span slots {sorted(slots)}; compose one slot at a time")
        if any(len(b.symbols) != n_symbols for b in bursts):
            raise ValueError("all bursts in a slot must carry the same symbol count")
    elif n_symbols is None:
        raise ValueError("n_symbols required for an empty slot")
    if powers is None:
        powers = [1.0] * len(bursts)
    total = np.zeros(slot_samples(pulse, n_symbols), dtype=np.complex128)
    contributors = []
    for burst, p in zip(bursts, powers):
        if p > 0.0:
            total += math.sqrt(p) * apply_channel(burst.symbols, burst.channel, pulse)
        contributors.append(Contributor(burst, p))
    samples = add_awgn(total, es_n0_db, rng)
    return SlotSignal(samples, pulse.oversampling / pulse.symbol_period, contributors)


def matched_filter(samples: np.ndarray, pulse: PulseShape) -> np.ndarray:
    """Filter with the time-reversed conjugate root pulse (full convolution).

    Dense complex convolution: numpy's convolve outruns a hand loop here,
    so this one stays out of the compiled kernel set.
    """
    return np.convolve(np.asarray(samples, dtype=np.complex128), pulse.taps(0.0)[::-1])


def matched_symbols(
    mf_samples: np.ndarray, pulse: PulseShape, count: int, grid_offset: int = 0
) -> np.ndarray:
    """Downsample a matched-filter output at the symbol instants.

    ``grid_offset`` shifts the sampling comb by whole samples (used to track
    a burst's nearest-sample timing).
    """
    q = pulse.oversampling
    start = symbol_peak_index(pulse, 0) + pulse.tap_center + grid_offset
    idx = start + q * np.arange(count)
    if idx[0] < 0 or idx[-1] >= len(mf_samples):
        raise ValueError("symbol comb falls outside the filtered signal")
    return mf_samples[idx]
