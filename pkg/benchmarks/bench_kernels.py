#!/usr/bin/env python3
"""Compare the compiled kernels against the numpy fallback.

Times the four hot kernels on representative workloads (one 536-symbol
burst at 4 samples per symbol) plus an end-to-end localization trial, and
prints a side-by-side table.  Run after building the extension:

    python benchmarks/bench_kernels.py [repeats]
"""

import sys
import time

import numpy as np

from marsala.kernels import _pykernels

try:
    from marsala.kernels import _ckernels
except ImportError:
    _ckernels = None

from marsala.cli import SimConfig, phase_error_trial


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def kernel_cases(rng):
    n_sym, q, span = 536, 4, 40
    symbols = rng.standard_normal(n_sym) + 1j * rng.standard_normal(n_sym)
    taps = rng.standard_normal(q * (span + 2) + 1)
    n_out = q * (n_sym + span)
    burst = rng.standard_normal(n_out) + 1j * rng.standard_normal(n_out)
    ref = rng.standard_normal(n_out) + 1j * rng.standard_normal(n_out)
    return {
        "synthesize (plain)": lambda k: k.synthesize_burst(symbols, taps, q, n_out, q, 0.0, 0.0),
        "synthesize (rotated)": lambda k: k.synthesize_burst(symbols, taps, q, n_out, q, 0.5, 1e-3),
        "rotate": lambda k: k.rotate(burst, 0.3, 1e-3),
        "cross_correlation": lambda k: k.cross_correlation_window(burst, ref, -10, 10),
    }


def main() -> int:
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 200
    rng = np.random.default_rng(0)
    cases = kernel_cases(rng)
    print(f"{'kernel':<22} {'numpy':>12} {'cython':>12} {'speedup':>9}")
    for name, call in cases.items():
        t_py = _time(lambda: call(_pykernels), repeats)
        if _ckernels is None:
            print(f"{name:<22} {t_py * 1e6:>10.1f}us {'n/a':>12} {'':>9}")
            continue
        t_c = _time(lambda: call(_ckernels), repeats)
        print(f"{name:<22} {t_py * 1e6:>10.1f}us {t_c * 1e6:>10.1f}us {t_py / t_c:>8.2f}x")

    # end-to-end: one phase-estimation trial (synthesis + correlation)
    import marsala.kernels as kernels

    cfg = SimConfig()
    pulse, modcod = cfg.pulse(), cfg.modcod()

    def trial():
        phase_error_trial(3, 7.0, pulse, 536, modcod, np.random.default_rng(1))

    t = _time(trial, max(3, repeats // 20))
    print(f"\nlocalization trial ({kernels.BACKEND} backend): {t * 1e3:.2f} ms")
    if _ckernels is None:
        print("compiled extension not built; numpy fallback only")
    return 0


if __name__ == "__main__":
    sys.exit(main())
