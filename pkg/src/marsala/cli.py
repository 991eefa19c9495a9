"""Experiment driver: config parsing, experiment commands, CSV output.

Subcommands:

* ``analyze``        closed-form combined-SNIR degradation sweep
* ``phy``            waveform Monte Carlo: phase-error statistics and
                     measured-vs-analytic combined SNIR
* ``simulate``       CRDSA/MARSALA throughput and PLR versus load
* ``localize-demo``  one annotated localization/combining trace

Configuration is a flat ``key = value`` text file ('#' starts a comment);
every output CSV starts with comment lines recording the fully resolved
configuration and master seed, so a run can be reproduced bit-exactly
from its own header.
"""

from __future__ import annotations

import argparse
import csv
import math
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np
from scipy import stats

from . import mac, snir_model
from .combiner import align_and_correct, combine
from .localization import cross_correlate, detect_peak, select_reference
from .waveform import (
    Burst,
    ChannelState,
    ModCod,
    PulseShape,
    compose_slot,
    generate_symbols,
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    """Fully resolved experiment configuration with explicit defaults."""

    rolloff: float = 0.2
    span_symbols: int = 40
    oversampling: int = 4
    symbol_period: float = 1.0
    packet_symbols: int = 536
    n_slots: int = 100
    n_replicas: int = 2
    es_n0_db: tuple = (7.0,)
    user_counts: tuple = (30, 60, 90, 120, 150, 180, 210)
    modulation_order: int = 4
    code_rate: float = 1.0 / 3.0
    decode_threshold_db: float = 0.0
    residual_cancel_fraction: float = 0.01
    sigma_phi2: float = mac.WORST_CASE_PHASE_VAR
    sigma_phi2_table: tuple = ()
    fidelity: str = "analytic"
    n_frames: int = 200
    n_trials: int = 2000
    interference_totals: tuple = (2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0)
    detection_threshold: float = 0.5
    seed: int = 1
    threads: int = 1
    out: str = "results.csv"

    def pulse(self) -> PulseShape:
        return PulseShape(
            rolloff=self.rolloff,
            span_symbols=self.span_symbols,
            oversampling=self.oversampling,
            symbol_period=self.symbol_period,
        )

    def modcod(self) -> ModCod:
        return ModCod(
            modulation_order=self.modulation_order,
            code_rate=self.code_rate,
            decode_threshold_db=self.decode_threshold_db,
        )

    def frame_config(self, es_n0_db: float, real_conditions: bool) -> mac.FrameConfig:
        eps = self.residual_cancel_fraction if real_conditions else 0.0
        return mac.FrameConfig(
            n_slots=self.n_slots,
            n_replicas=self.n_replicas,
            symbols_per_slot=self.packet_symbols,
            es_n0_db=es_n0_db,
            residual_cancel_fraction=eps,
            fidelity=self.fidelity,
            detection_threshold=self.detection_threshold,
            pulse=self.pulse() if self.fidelity == "waveform" else None,
        )

    def sync_params(self) -> mac.SyncModelParams:
        # per-interferer-count variances (e.g. measured by the phy command)
        # take precedence over the scalar worst-case value
        table = self.sigma_phi2_table or (self.sigma_phi2,) * 4
        return mac.SyncModelParams(
            oversampling=self.oversampling,
            isi_slope_sum=snir_model.isi_slope_sum(self.pulse()),
            phase_var_table=tuple(table),
        )

    def validate(self) -> "SimConfig":
        checks = {
            "rolloff": lambda: 0.0 < self.rolloff < 1.0,
            "span_symbols": lambda: self.span_symbols >= 4 and self.span_symbols % 2 == 0,
            "oversampling": lambda: self.oversampling >= 2,
            "symbol_period": lambda: self.symbol_period > 0,
            "packet_symbols": lambda: self.packet_symbols >= 1,
            "n_replicas": lambda: self.n_replicas >= 2,
            "n_slots": lambda: self.n_slots > self.n_replicas,
            "es_n0_db": lambda: len(self.es_n0_db) > 0,
            "user_counts": lambda: all(n >= 1 for n in self.user_counts),
            "code_rate": lambda: 0.0 < self.code_rate <= 1.0,
            "modulation_order": lambda: self.modulation_order >= 2
            and self.modulation_order & (self.modulation_order - 1) == 0,
            "residual_cancel_fraction": lambda: 0.0 <= self.residual_cancel_fraction < 1.0,
            "sigma_phi2": lambda: self.sigma_phi2 >= 0.0,
            "sigma_phi2_table": lambda: all(v >= 0.0 for v in self.sigma_phi2_table),
            "fidelity": lambda: self.fidelity in ("analytic", "waveform"),
            "n_frames": lambda: self.n_frames >= 1,
            "n_trials": lambda: self.n_trials >= 1,
            "interference_totals": lambda: all(t >= 0 for t in self.interference_totals),
            "detection_threshold": lambda: self.detection_threshold > 0.0,
            "threads": lambda: self.threads >= 1,
        }
        for key, ok in checks.items():
            if not ok():
                raise ConfigError(f"invalid value for {key!r}: {getattr(self, key)!r}")
        return self


def _parse_float_tuple(text: str) -> tuple:
    return tuple(float(v) for v in text.split(",") if v.strip())


def _parse_int_tuple(text: str) -> tuple:
    return tuple(int(v) for v in text.split(",") if v.strip())


_PARSERS = {
    "rolloff": float,
    "span_symbols": int,
    "oversampling": int,
    "symbol_period": float,
    "packet_symbols": int,
    "n_slots": int,
    "n_replicas": int,
    "es_n0_db": _parse_float_tuple,
    "user_counts": _parse_int_tuple,
    "modulation_order": int,
    "code_rate": float,
    "decode_threshold_db": float,
    "residual_cancel_fraction": float,
    "sigma_phi2": lambda v: mac.WORST_CASE_PHASE_VAR if v.strip() == "worst" else float(v),
    "sigma_phi2_table": _parse_float_tuple,
    "fidelity": str,
    "n_frames": int,
    "n_trials": int,
    "interference_totals": _parse_float_tuple,
    "detection_threshold": float,
    "seed": int,
    "threads": int,
    "out": str,
}


def parse_config(path) -> SimConfig:
    """Parse and validate a flat key/value config file."""
    values = {}
    text = Path(path).read_text()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](value)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return SimConfig(**values).validate()


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path, config: SimConfig, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for f in fields(SimConfig):
            fh.write(f"# {f.name} = {_format_value(getattr(config, f.name))}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        writer.writerows(rows)


def _fmt(x) -> str:
    # repr round-trips doubles exactly, keeping identities like
    # throughput = load * (1 - plr) intact across the CSV boundary
    if isinstance(x, float):
        return repr(x)
    return str(x)


# ---------------------------------------------------------------------------
# analyze: closed-form degradation sweep
# ---------------------------------------------------------------------------

ANALYZE_COLUMNS = (
    "snir_ref_db",
    "snir_eq_db",
    "degradation_db",
    "nb",
    "q",
    "sigma_phi2",
    "i_config",
    "error_model",
)


def analyze_rows(config: SimConfig):
    """Degradation of the combined SNIR versus its zero-error reference.

    For every interference total, three rows: no errors at all, timing
    errors only, and timing plus phase errors at the configured variance.
    """
    beta = snir_model.isi_slope_sum(config.pulse())
    nb = config.n_replicas
    q = config.oversampling
    n0 = 10.0 ** (-config.es_n0_db[0] / 10.0)
    rows = []
    for total in config.interference_totals:
        per_slot = tuple(total / nb for _ in range(nb))
        i_config = "+".join(f"{p:g}" for p in per_slot)
        for label, sigma2, slope in (
            ("none", 0.0, 0.0),
            ("timing_only", 0.0, beta),
            ("timing_phase", config.sigma_phi2, beta),
        ):
            inp = snir_model.SnirModelInput(
                n_replicas=nb,
                oversampling=q,
                phase_err_variance=sigma2,
                isi_slope_sum=slope,
                interference_powers=per_slot,
                noise_power=n0,
            )
            b = snir_model.equivalent_snir(inp)
            degradation = b.degradation_db if label != "none" else 0.0
            rows.append(
                tuple(
                    _fmt(v)
                    for v in (
                        b.snir_ref_db,
                        b.snir_ref_db - degradation,
                        degradation,
                        nb,
                        q,
                        sigma2,
                        i_config,
                        label,
                    )
                )
            )
    return rows


def cmd_analyze(config: SimConfig) -> None:
    _write_csv(config.out, config, ANALYZE_COLUMNS, analyze_rows(config))


# ---------------------------------------------------------------------------
# phy: waveform Monte Carlo
# ---------------------------------------------------------------------------

PHY_COLUMNS = (
    "n_interferers",
    "es_n0_db",
    "n_trials",
    "n_kept",
    "phase_err_var",
    "phase_err_mean",
    "normality_p",
)
HIST_COLUMNS = ("n_interferers", "bin_left", "bin_right", "density")
SNIR_COLUMNS = (
    "i_ref",
    "i_rep",
    "trials",
    "measured_snir_db",
    "model_snir_db",
    "model_snir_nominal_db",
    "snir_ref_db",
)


def _wrap_phase(x: float) -> float:
    return math.atan2(math.sin(x), math.cos(x))


def _interferer_burst(slot_index: int, n_symbols: int, modcod, rng, symbol_period=1.0) -> Burst:
    ts = symbol_period
    channel = ChannelState(
        timing_offset=rng.uniform(-ts, ts),
        freq_offset=rng.uniform(0.0, 0.01 / ts),
        phase=rng.uniform(-np.pi, np.pi),
    )
    return Burst(
        user_id=-1,
        replica_index=0,
        slot_index=slot_index,
        symbols=generate_symbols(n_symbols, modcod, rng),
        channel=channel,
    )


def phase_error_trial(
    n_interferers: int,
    es_n0_db: float,
    pulse: PulseShape,
    n_symbols: int,
    modcod: ModCod,
    rng: np.random.Generator,
):
    """One localization trial; returns the phase-estimate error or None.

    Both slots carry the packet plus ``n_interferers`` independent bursts.
    Trials whose correlation peak lands more than one sample away from the
    true offset are gross localization errors and are excluded (the error
    model conditions on correct localization).
    """
    ts = pulse.symbol_period
    q = pulse.oversampling
    symbols = generate_symbols(n_symbols, modcod, rng)
    tau = rng.uniform(-ts, ts, size=2)
    phases = rng.uniform(-np.pi, np.pi, size=2)
    dfreq = rng.uniform(0.0, 0.01 / ts)
    user = [
        Burst(0, i, i, symbols, ChannelState(tau[i], dfreq, phases[i])) for i in range(2)
    ]
    slots = []
    for i in range(2):
        bursts = [user[i]] + [
            _interferer_burst(i, n_symbols, modcod, rng, ts) for _ in range(n_interferers)
        ]
        slots.append(compose_slot(bursts, es_n0_db, pulse, rng, n_symbols=n_symbols))
    series = cross_correlate(slots[0], slots[1], (-(2 * q + 2), 2 * q + 2))
    peak = detect_peak(series, pulse.sample_period)
    true_shift = (tau[1] - tau[0]) * q / ts
    if abs(peak.lag_samples - true_shift) > 1.0:
        return None
    expected = (phases[1] - phases[0]) + 2 * np.pi * dfreq * peak.lag_samples * ts / q
    return _wrap_phase(peak.phase_estimate - expected)


def phase_error_stats(
    n_interferers: int,
    es_n0_db: float,
    config: SimConfig,
    n_trials: int,
    seed: int,
):
    """Phase-error sample over ``n_trials`` independent trials."""
    pulse = config.pulse()
    modcod = config.modcod()
    errors = []
    for trial in range(n_trials):
        rng = np.random.default_rng(
            np.random.SeedSequence(seed, spawn_key=(n_interferers, trial))
        )
        err = phase_error_trial(
            n_interferers, es_n0_db, pulse, config.packet_symbols, modcod, rng
        )
        if err is not None:
            errors.append(err)
    return np.asarray(errors)


def combine_trial(
    i_ref: int,
    i_rep: int,
    es_n0_db: float,
    pulse: PulseShape,
    n_symbols: int,
    modcod: ModCod,
    rng: np.random.Generator,
):
    """One physical localization+combination trial; returns measured SNIR dB."""
    ts = pulse.symbol_period
    q = pulse.oversampling
    symbols = generate_symbols(n_symbols, modcod, rng)
    tau = rng.uniform(-ts, ts, size=2)
    phases = rng.uniform(-np.pi, np.pi, size=2)
    dfreq = rng.uniform(0.0, 0.01 / ts)
    user = [
        Burst(0, i, i, symbols, ChannelState(tau[i], dfreq, phases[i])) for i in range(2)
    ]
    slots = []
    for i, k in enumerate((i_ref, i_rep)):
        bursts = [user[i]] + [_interferer_burst(i, n_symbols, modcod, rng, ts) for _ in range(k)]
        slots.append(compose_slot(bursts, es_n0_db, pulse, rng, n_symbols=n_symbols))
    series = cross_correlate(slots[0], slots[1], (-(2 * q + 2), 2 * q + 2))
    peak = detect_peak(series, pulse.sample_period)
    aligned = align_and_correct(slots[1], peak)
    grid = int(round(tau[0] * q / ts))
    result = combine(
        slots[0],
        [aligned],
        pulse,
        n_symbols,
        known_symbols=symbols,
        grid_offset=grid,
        derotation=user[0].channel,
    )
    return result.measured_snir_db


def measured_vs_model_rows(config: SimConfig, es_n0_db: float, n_cmp: int):
    """Mean measured combined SNIR against the closed-form prediction.

    The model rows are evaluated twice: with the nominal per-slot
    interferer counts and with the effective post-filter interference
    power of asynchronous interferers (count scaled by the mean squared
    Nyquist response over a symbol period).
    """
    pulse = config.pulse()
    modcod = config.modcod()
    beta = snir_model.isi_slope_sum(pulse)
    factor = asynchronous_interference_factor(pulse)
    n0 = 10.0 ** (-es_n0_db / 10.0)
    rows = []
    for i_ref, i_rep in ((1, 1), (1, 2), (2, 2), (2, 3), (3, 3)):
        snirs = []
        for trial in range(n_cmp):
            rng = np.random.default_rng(
                np.random.SeedSequence(config.seed, spawn_key=(7, i_ref, i_rep, trial))
            )
            snirs.append(
                combine_trial(
                    i_ref, i_rep, es_n0_db, pulse, config.packet_symbols, modcod, rng
                )
            )
        measured = 10 * math.log10(float(np.mean(10 ** (np.asarray(snirs) / 10))))
        worst = max(i_ref, i_rep)
        sigma2 = config.sigma_phi2 if worst > 0 else 0.0
        model_eff = snir_model.equivalent_snir(
            snir_model.SnirModelInput(
                2, pulse.oversampling, sigma2, beta, (i_ref * factor, i_rep * factor), n0
            )
        )
        model_nom = snir_model.equivalent_snir(
            snir_model.SnirModelInput(
                2, pulse.oversampling, sigma2, beta, (float(i_ref), float(i_rep)), n0
            )
        )
        rows.append(
            tuple(
                _fmt(v)
                for v in (
                    i_ref,
                    i_rep,
                    n_cmp,
                    measured,
                    model_eff.snir_eq_db,
                    model_nom.snir_eq_db,
                    model_nom.snir_ref_db,
                )
            )
        )
    return rows


def asynchronous_interference_factor(pulse: PulseShape) -> float:
    """Mean post-matched-filter power of an asynchronous unit-power burst.

    An interferer with a uniformly random timing offset couples into the
    symbol-rate samples with the average squared Nyquist response over one
    symbol period, slightly below one.
    """
    from .waveform import raised_cosine

    ts = pulse.symbol_period
    taus = (np.arange(400) + 0.5) / 400 * ts
    lobes = np.arange(-pulse.span_symbols // 2, pulse.span_symbols // 2 + 1)
    vals = raised_cosine(lobes[None, :] * ts + taus[:, None], pulse)
    return float(np.mean(np.sum(vals**2, axis=1)))


def cmd_phy(config: SimConfig) -> None:
    es = config.es_n0_db[0]
    main_rows = []
    hist_rows = []
    for k in range(4):
        errors = phase_error_stats(k, es, config, config.n_trials, config.seed)
        var = float(np.var(errors))
        p = float(stats.normaltest(errors).pvalue) if len(errors) >= 20 else math.nan
        main_rows.append(
            tuple(
                _fmt(v)
                for v in (k, es, config.n_trials, len(errors), var, float(np.mean(errors)), p)
            )
        )
        density, edges = np.histogram(errors, bins=41, density=True)
        for d, left, right in zip(density, edges[:-1], edges[1:]):
            hist_rows.append(tuple(_fmt(v) for v in (k, left, right, d)))
    out = Path(config.out)
    _write_csv(out, config, PHY_COLUMNS, main_rows)
    _write_csv(out.with_name(out.stem + "_hist.csv"), config, HIST_COLUMNS, hist_rows)
    n_cmp = max(10, min(300, config.n_trials // 10))
    snir_rows = measured_vs_model_rows(config, es, n_cmp)
    _write_csv(out.with_name(out.stem + "_snir.csv"), config, SNIR_COLUMNS, snir_rows)


# ---------------------------------------------------------------------------
# simulate: load sweeps
# ---------------------------------------------------------------------------

SIMULATE_COLUMNS = (
    "scheme",
    "csi",
    "nb",
    "es_n0_db",
    "load_g",
    "throughput",
    "plr",
    "frames",
    "seed",
)


def simulate_rows(config: SimConfig):
    modcod = config.modcod()
    rows = []
    for es in config.es_n0_db:
        for scheme in ("crdsa", "marsala"):
            for csi in ("perfect", "real"):
                frame_cfg = config.frame_config(es, real_conditions=csi == "real")
                sync = config.sync_params() if csi == "real" else None
                points = mac.sweep_load(
                    config.user_counts,
                    modcod,
                    frame_cfg,
                    config.n_frames,
                    config.seed,
                    scheme=scheme,
                    sync=sync,
                    workers=config.threads,
                )
                for pt in points:
                    rows.append(
                        tuple(
                            _fmt(v)
                            for v in (
                                scheme,
                                csi,
                                config.n_replicas,
                                es,
                                pt.load_g,
                                pt.throughput_t,
                                pt.plr,
                                pt.frames_run,
                                pt.seed,
                            )
                        )
                    )
    return rows


def cmd_simulate(config: SimConfig) -> None:
    _write_csv(config.out, config, SIMULATE_COLUMNS, simulate_rows(config))


# ---------------------------------------------------------------------------
# localize-demo
# ---------------------------------------------------------------------------


def cmd_localize_demo(config: SimConfig, stream=None) -> None:
    """Annotated single-packet localization and combining walkthrough."""
    stream = stream or sys.stdout
    pulse = config.pulse()
    modcod = config.modcod()
    rng = np.random.default_rng(config.seed)
    n = min(config.packet_symbols, 128)
    ts = pulse.symbol_period
    symbols = generate_symbols(n, modcod, rng)
    chans = [
        ChannelState(rng.uniform(-ts, ts), rng.uniform(0, 0.01 / ts), rng.uniform(-np.pi, np.pi))
        for _ in range(2)
    ]
    chans[1] = replace(chans[1], freq_offset=chans[0].freq_offset)
    user = [Burst(0, i, i, symbols, chans[i]) for i in range(2)]
    es = config.es_n0_db[0]
    slots = [
        compose_slot(
            [user[i], _interferer_burst(i, n, modcod, rng, ts)], es, pulse, rng, n_symbols=n
        )
        for i in range(2)
    ]
    powers = [(i, s.power) for i, s in enumerate(slots)]
    ref = select_reference(powers)
    other = 1 - ref
    print(f"slot powers: {[f'{p:.4f}' for _, p in powers]} -> reference slot {ref}", file=stream)
    q = pulse.oversampling
    series = cross_correlate(slots[ref], slots[other], (-(2 * q + 2), 2 * q + 2))
    peak = detect_peak(series, pulse.sample_period)
    true_shift = (chans[other].timing_offset - chans[ref].timing_offset) * q / ts
    print(
        f"correlation peak: lag {peak.lag_samples} samples "
        f"(true offset {true_shift:+.2f}), |R| = {peak.magnitude:.4f}, "
        f"phase estimate {peak.phase_estimate:+.4f} rad",
        file=stream,
    )
    aligned = align_and_correct(slots[other], peak)
    grid = int(round(chans[ref].timing_offset * q / ts))
    result = combine(
        slots[ref],
        [aligned],
        pulse,
        n,
        known_symbols=symbols,
        grid_offset=grid,
        derotation=chans[ref],
    )
    single = combine(
        slots[ref], [], pulse, n, known_symbols=symbols, grid_offset=grid, derotation=chans[ref]
    )
    print(
        f"SNIR on reference slot alone: {single.measured_snir_db:+.2f} dB; "
        f"after combining {result.contributors} replicas: {result.measured_snir_db:+.2f} dB",
        file=stream,
    )


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marsala",
        description="Slotted random-access return-link experiments (CSV output)",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("analyze", "phy", "simulate", "localize-demo"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None, help="flat key=value config file")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out", type=str, default=None, help="output CSV path override")
        p.add_argument("--threads", type=int, default=None, help="worker count override")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        config = parse_config(args.config) if args.config else SimConfig().validate()
        overrides = {}
        for key in ("seed", "out", "threads"):
            if getattr(args, key) is not None:
                overrides[key] = getattr(args, key)
        if overrides:
            config = replace(config, **overrides).validate()
    except (ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    command = {
        "analyze": cmd_analyze,
        "phy": cmd_phy,
        "simulate": cmd_simulate,
        "localize-demo": cmd_localize_demo,
    }[args.command]
    command(config)
    if args.command != "localize-demo":
        print(f"wrote {config.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
