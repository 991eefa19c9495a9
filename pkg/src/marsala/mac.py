"""Frame-level CRDSA and MARSALA simulation with interference cancellation.

Each of ``n_users`` terminals repeats its packet on ``n_replicas`` distinct
slots of a frame.  CRDSA iteratively decodes any replica whose single-slot
SNIR clears the decoding point and cancels the user's replicas everywhere
(down to a configurable residual fraction).  When CRDSA stalls, MARSALA
picks each remaining packet's lowest-power slot as reference, combines its
replicas and retries the decision with the combined SNIR, triggering
further cancellation rounds on success.

Two fidelities are available: ``analytic`` predicts the combined SNIR with
the closed-form model (fast, used for load sweeps), ``waveform`` actually
synthesizes the slots and runs localization plus combining (slow, for
cross-checking the analytic path on small frames).
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import snir_model
from .combiner import align_and_correct, combine, decode_decision
from .localization import LocalizationError, localize_replicas
from .waveform import (
    ChannelState,
    ModCod,
    PulseShape,
    SlotSignal,
    apply_channel,
    generate_symbols,
    nominal_burst_power,
    slot_samples,
)

# Phase-error variance of the replica phase estimate, indexed by the number
# of interfering packets per slot; the last entry is the worst-case
# fallback for heavier collisions.
WORST_CASE_PHASE_VAR = 0.0125
WORST_CASE_PHASE_TABLE = (WORST_CASE_PHASE_VAR,) * 4


@dataclass(frozen=True)
class SyncModelParams:
    """Residual-error parameters for the analytic combined-SNIR prediction.

    ``None`` in the decode calls means perfect synchronization (zero sync
    error, no ISI penalty).
    """

    oversampling: int = 4
    isi_slope_sum: float = 0.0
    phase_var_table: tuple = WORST_CASE_PHASE_TABLE

    def phase_variance(self, interferer_count: int) -> float:
        idx = min(int(interferer_count), len(self.phase_var_table) - 1)
        return self.phase_var_table[idx]


@dataclass(frozen=True)
class FrameConfig:
    n_slots: int = 100
    n_replicas: int = 2
    symbols_per_slot: int = 536
    es_n0_db: float = 7.0
    residual_cancel_fraction: float = 0.0
    fidelity: str = "analytic"
    detection_threshold: float = 0.5
    pulse: PulseShape | None = None

    def __post_init__(self):
        if self.n_replicas < 2:
            raise ValueError(f"n_replicas must be >= 2, got {self.n_replicas}")
        if self.n_slots <= self.n_replicas:
            raise ValueError(f"n_slots must exceed n_replicas, got {self.n_slots}")
        if not 0.0 <= self.residual_cancel_fraction < 1.0:
            raise ValueError("residual_cancel_fraction must be in [0, 1)")
        if self.fidelity not in ("analytic", "waveform"):
            raise ValueError(f"fidelity must be analytic|waveform, got {self.fidelity!r}")
        if self.fidelity == "waveform" and self.pulse is None:
            raise ValueError("waveform fidelity requires a pulse")
        if self.symbols_per_slot < 1:
            raise ValueError("symbols_per_slot must be >= 1")

    @property
    def noise_power(self) -> float:
        return 10.0 ** (-self.es_n0_db / 10.0)


@dataclass
class FrameState:
    """Per-frame bookkeeping: placements, impairments, residual powers."""

    user_slots: np.ndarray  # (n_users, n_replicas) int
    timing_offsets: np.ndarray  # (n_users, n_replicas) seconds
    phases: np.ndarray  # (n_users, n_replicas) radians
    freq_offsets: np.ndarray  # (n_users,) Hz, constant per user per frame
    residual: np.ndarray  # (n_users,) linear power of remaining contribution
    decoded: np.ndarray  # (n_users,) bool
    slot_power: np.ndarray  # (n_slots,) sum of residual powers per slot
    iterations: int = 0

    @property
    def n_users(self) -> int:
        return len(self.user_slots)

    @classmethod
    def from_placements(cls, user_slots, n_slots: int) -> "FrameState":
        user_slots = np.atleast_2d(np.asarray(user_slots, dtype=np.int64))
        n_users, nb = user_slots.shape
        for row in user_slots:
            if len(set(row.tolist())) != nb:
                raise ValueError("replica slots of one user must be distinct")
        slot_power = np.zeros(n_slots)
        np.add.at(slot_power, user_slots.ravel(), 1.0)
        return cls(
            user_slots=user_slots,
            timing_offsets=np.zeros((n_users, nb)),
            phases=np.zeros((n_users, nb)),
            freq_offsets=np.zeros(n_users),
            residual=np.ones(n_users),
            decoded=np.zeros(n_users, dtype=bool),
            slot_power=slot_power,
        )

    def channel(self, user: int, replica: int, pulse: PulseShape) -> ChannelState:
        return ChannelState(
            timing_offset=float(self.timing_offsets[user, replica]),
            freq_offset=float(self.freq_offsets[user]),
            phase=float(self.phases[user, replica]),
        ).validate(pulse)

    def interference_on(self, slot: int, user: int) -> float:
        """Aggregate interference power on ``slot`` as seen by ``user``."""
        own = self.residual[user] if slot in self.user_slots[user] else 0.0
        return float(self.slot_power[slot]) - own

    def cancel(self, user: int, residual_fraction: float,
               rng: np.random.Generator | None = None) -> None:
        """Remove a decoded user's contribution, keeping a residual.

        An imperfect cancellation leaves the power of a random channel
        estimation error behind: exponentially distributed with mean
        ``residual_fraction`` when an rng is supplied, the mean itself in
        deterministic runs, zero when the fraction is zero.
        """
        residual = residual_fraction
        if rng is not None and residual_fraction > 0.0:
            residual = min(float(rng.exponential(residual_fraction)), 1.0)
        delta = self.residual[user] - residual
        self.slot_power[self.user_slots[user]] -= delta
        self.residual[user] = residual
        self.decoded[user] = True


def generate_frame(n_users: int, config: FrameConfig, rng: np.random.Generator) -> FrameState:
    """Place every user's replicas on distinct uniform slots and draw channels.

    Timing offset and phase are redrawn per slot; the carrier frequency
    offset is drawn once per user and held for the frame.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    nb, ns = config.n_replicas, config.n_slots
    if nb > ns:
        raise ValueError("more replicas than slots")
    keys = rng.random((n_users, ns))
    user_slots = np.argpartition(keys, nb - 1, axis=1)[:, :nb].astype(np.int64)
    ts = config.pulse.symbol_period if config.pulse is not None else 1.0
    timing = rng.uniform(-ts, ts, size=(n_users, nb))
    phases = rng.uniform(-np.pi, np.pi, size=(n_users, nb))
    freqs = rng.uniform(0.0, 0.01 / ts, size=n_users)
    slot_power = np.zeros(ns)
    np.add.at(slot_power, user_slots.ravel(), 1.0)
    return FrameState(
        user_slots=user_slots,
        timing_offsets=timing,
        phases=phases,
        freq_offsets=freqs,
        residual=np.ones(n_users),
        decoded=np.zeros(n_users, dtype=bool),
        slot_power=slot_power,
    )


def slot_snir(interference_power: float, es_n0_db: float) -> float:
    """Single-slot SNIR in dB for a unit-power packet.

    ``interference_power`` is the aggregate co-slot interference in units
    of the common packet power (equi-powered system); residuals of
    cancelled packets count fractionally.
    """
    if interference_power < 0:
        raise ValueError("interference power must be >= 0")
    n0 = 0.0 if math.isinf(es_n0_db) else 10.0 ** (-es_n0_db / 10.0)
    return -10.0 * math.log10(interference_power + n0)


def crdsa_decode(
    state: FrameState,
    modcod: ModCod,
    config: FrameConfig,
    rng: np.random.Generator | None = None,
) -> FrameState:
    """Iterate single-replica decoding and cancellation to a fixed point.

    Each pass evaluates every undecoded user against the pass-start state;
    a pass that decodes nobody ends the loop.
    """
    eps = config.residual_cancel_fraction
    n0 = config.noise_power
    while True:
        state.iterations += 1
        users = np.nonzero(~state.decoded)[0]
        if len(users) == 0:
            return state
        interf = state.slot_power[state.user_slots[users]] - state.residual[users, None]
        best_interf = interf.min(axis=1)
        snir_db = -10.0 * np.log10(best_interf + n0)
        ok = snir_db >= modcod.decode_threshold_db
        if rng is not None:
            ok &= rng.random(len(users)) >= 1e-5
        winners = users[ok]
        if len(winners) == 0:
            return state
        for u in winners:
            state.cancel(int(u), eps, rng)


@lru_cache(maxsize=1024)
def _combining_terms(nb: int, q: int, sigma2: float, beta: float) -> tuple[float, float]:
    """Useful power and worst-case ISI power of the combining model.

    Both depend only on the replica count, grid and error statistics, so
    per-packet evaluation reduces to one division over the interference
    plus noise total.
    """
    inp = snir_model.SnirModelInput(nb, q, sigma2, beta, (0.0,) * nb, 1.0)
    p_des = snir_model.desired_power(inp)
    _, _, p_isi = snir_model.isi_moments(beta, q, nb, sigma2)
    return p_des, p_isi


def combined_snir_db(
    state: FrameState,
    user: int,
    config: FrameConfig,
    sync: SyncModelParams | None,
) -> float:
    """Analytic prediction of the SNIR after combining a user's replicas."""
    sp = state.slot_power
    own = state.residual[user]
    interf = [float(sp[s]) - own for s in state.user_slots[user]]
    nb = config.n_replicas
    denom = sum(interf) + nb * config.noise_power
    if sync is None:
        return 10.0 * math.log10(nb * nb / denom)
    worst_count = int(math.ceil(max(interf) - 1e-9))
    p_des, p_isi = _combining_terms(
        nb, sync.oversampling, sync.phase_variance(worst_count), sync.isi_slope_sum
    )
    return 10.0 * math.log10(p_des / (p_isi + denom))


def marsala_decode(
    state: FrameState,
    modcod: ModCod,
    config: FrameConfig,
    sync: SyncModelParams | None = None,
    rng: np.random.Generator | None = None,
    waveform_rng: np.random.Generator | None = None,
) -> FrameState:
    """Resolve stalled packets by replica combining, then re-run cancellation.

    Undecoded packets are attempted in ascending reference-slot power; each
    success cancels the packet and re-runs CRDSA before the ordering is
    rebuilt.  Stops when a full sweep decodes nothing.
    """
    crdsa_decode(state, modcod, config, rng)
    decoder = None
    while True:
        users = np.nonzero(~state.decoded)[0]
        if len(users) == 0:
            return state
        if config.fidelity == "waveform" and decoder is None:
            decoder = _WaveformDecoder(
                state, config, modcod, waveform_rng if waveform_rng is not None else rng
            )
        ref_power = state.slot_power[state.user_slots[users]].min(axis=1)
        order = users[np.lexsort((users, ref_power))]
        progress = False
        for u in order:
            u = int(u)
            if decoder is not None:
                snir_db = decoder.attempt(u)
                if snir_db is None:
                    continue
            else:
                snir_db = combined_snir_db(state, u, config, sync)
            if decode_decision(snir_db, modcod, rng):
                state.cancel(u, config.residual_cancel_fraction, rng)
                if decoder is not None:
                    decoder.invalidate(state.user_slots[u])
                crdsa_decode(state, modcod, config, rng)
                if decoder is not None:
                    decoder.refresh()
                progress = True
                break
        if not progress:
            return state


class _WaveformDecoder:
    """Synthesizes the frame's slots and runs the physical MARSALA chain.

    Noise is drawn once per slot and kept across cancellation rounds;
    cancelled users keep a residual amplitude of sqrt(residual fraction).
    """

    def __init__(self, state, config, modcod, rng):
        if rng is None:
            raise ValueError("waveform fidelity needs an rng")
        self.state = state
        self.config = config
        self.pulse = config.pulse
        n = config.symbols_per_slot
        self.n_symbols = n
        self.nominal_power = nominal_burst_power(self.pulse, n)
        self.symbols = [generate_symbols(n, modcod, rng) for _ in range(state.n_users)]
        n_samp = slot_samples(self.pulse, n)
        var = config.noise_power
        self.noise = [
            math.sqrt(var / 2.0)
            * (rng.standard_normal(n_samp) + 1j * rng.standard_normal(n_samp))
            for _ in range(config.n_slots)
        ]
        self._burst_cache: dict = {}
        self._slots: list = [None] * config.n_slots
        self._decoded_snapshot = state.decoded.copy()

    def _burst_samples(self, user: int, replica: int) -> np.ndarray:
        key = (user, replica)
        if key not in self._burst_cache:
            ch = self.state.channel(user, replica, self.pulse)
            self._burst_cache[key] = apply_channel(self.symbols[user], ch, self.pulse)
        return self._burst_cache[key]

    def slot_signal(self, slot: int):
        if self._slots[slot] is None:
            total = self.noise[slot].astype(np.complex128, copy=True)
            for user in range(self.state.n_users):
                amp = math.sqrt(self.state.residual[user])
                if amp == 0.0:
                    continue
                for replica, s in enumerate(self.state.user_slots[user]):
                    if s == slot:
                        total += amp * self._burst_samples(user, replica)
            self._slots[slot] = SlotSignal(
                total, self.pulse.oversampling / self.pulse.symbol_period, []
            )
        return self._slots[slot]

    def invalidate(self, slots) -> None:
        for s in np.asarray(slots).ravel():
            self._slots[int(s)] = None

    def refresh(self) -> None:
        """Drop composed slots for users decoded since the last snapshot."""
        newly = np.nonzero(self.state.decoded & ~self._decoded_snapshot)[0]
        for u in newly:
            self.invalidate(self.state.user_slots[int(u)])
        self._decoded_snapshot = self.state.decoded.copy()

    def attempt(self, user: int):
        """Localize and combine one packet; returns measured SNIR or None."""
        slots = self.state.user_slots[user]
        signals = [self.slot_signal(s) for s in range(self.config.n_slots)]
        powers = [signals[int(s)].power for s in slots]
        ref_pos = int(np.argmin(powers))
        ref_slot = int(slots[ref_pos])
        q = self.pulse.oversampling
        try:
            peaks = localize_replicas(
                signals,
                ref_slot,
                expected_count=self.config.n_replicas - 1,
                detection_threshold=self.config.detection_threshold,
                nominal_power=self.nominal_power,
                lag_halfwidth=2 * q + 2,
                sample_period=self.pulse.sample_period,
            )
        except LocalizationError:
            return None
        aligned = [align_and_correct(signals[p.slot_index], p) for p in peaks]
        tau_ref = float(self.state.timing_offsets[user, ref_pos])
        grid = int(round(tau_ref * q / self.pulse.symbol_period))
        ref_channel = self.state.channel(user, ref_pos, self.pulse)
        result = combine(
            signals[ref_slot],
            aligned,
            self.pulse,
            self.n_symbols,
            known_symbols=self.symbols[user],
            grid_offset=grid,
            derotation=ref_channel,
        )
        return result.measured_snir_db


@dataclass(frozen=True)
class LoadPoint:
    load_g: float
    throughput_t: float
    plr: float
    frames_run: int
    seed: int


def normalized_load(n_users: int, modcod: ModCod, n_slots: int) -> float:
    """Offered load in information bits per symbol."""
    return modcod.bits_per_symbol * n_users / n_slots


def _frame_rng(seed: int, n_users: int, frame: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(n_users, frame)))


def _run_frames(args) -> int:
    (seed, n_users, frames, modcod, config, scheme, sync, deterministic) = args
    lost = 0
    for f in frames:
        rng = _frame_rng(seed, n_users, f)
        state = generate_frame(n_users, config, rng)
        decode_rng = None if deterministic else rng
        if scheme == "crdsa":
            crdsa_decode(state, modcod, config, decode_rng)
        else:
            marsala_decode(state, modcod, config, sync, decode_rng, waveform_rng=rng)
        lost += int(np.count_nonzero(~state.decoded))
    return lost


def run_load_point(
    n_users: int,
    modcod: ModCod,
    config: FrameConfig,
    n_frames: int,
    seed: int,
    scheme: str = "marsala",
    sync: SyncModelParams | None = None,
    workers: int = 1,
    deterministic_decode: bool = False,
) -> LoadPoint:
    """Monte Carlo PLR/throughput at one offered load.

    Every frame gets its own generator derived from ``(seed, n_users,
    frame index)``, so results are identical for any ``workers`` count.
    """
    if n_frames < 1:
        raise ValueError("n_frames must be >= 1")
    if scheme not in ("crdsa", "marsala"):
        raise ValueError(f"scheme must be crdsa|marsala, got {scheme!r}")
    frame_ids = list(range(n_frames))
    if workers <= 1 or n_frames == 1:
        lost = _run_frames(
            (seed, n_users, frame_ids, modcod, config, scheme, sync, deterministic_decode)
        )
    else:
        chunks = [frame_ids[i::workers] for i in range(workers)]
        tasks = [
            (seed, n_users, chunk, modcod, config, scheme, sync, deterministic_decode)
            for chunk in chunks
            if chunk
        ]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            lost = sum(pool.map(_run_frames, tasks))
    plr = lost / (n_users * n_frames)
    g = normalized_load(n_users, modcod, config.n_slots)
    return LoadPoint(load_g=g, throughput_t=g * (1.0 - plr), plr=plr, frames_run=n_frames, seed=seed)


def sweep_load(
    user_counts,
    modcod: ModCod,
    config: FrameConfig,
    n_frames: int,
    seed: int,
    scheme: str = "marsala",
    sync: SyncModelParams | None = None,
    workers: int = 1,
    deterministic_decode: bool = False,
) -> list[LoadPoint]:
    """One :func:`run_load_point` per user count; seeds derive from the count."""
    return [
        run_load_point(
            int(n),
            modcod,
            config,
            n_frames,
            seed,
            scheme=scheme,
            sync=sync,
            workers=workers,
            deterministic_decode=deterministic_decode,
        )
        for n in user_counts
    ]
