"""Pure-numpy implementations of the hot kernels.

Reference semantics for the compiled extension; every function here must
stay numerically interchangeable with its `_ckernels` twin.
"""

import numpy as np


def synthesize_burst(symbols, taps, q, n_out, shift, phase0, dphi):
    """Fused burst synthesis.

    out[n] = (sum_k symbols[k] * taps[n + shift - k*q]) * exp(j*(phase0 + n*dphi))

    `symbols` is the symbol train, `taps` the pulse evaluated on the sample
    grid (possibly at a fractional time offset), `q` the samples-per-symbol
    upsampling factor.  Indices outside `taps` contribute zero.
    """
    symbols = np.ascontiguousarray(symbols, dtype=np.complex128)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    up = np.zeros((len(symbols) - 1) * q + 1, dtype=np.complex128)
    up[::q] = symbols
    full = np.convolve(up, taps)  # full[m] = sum_k symbols[k] * taps[m - k*q]
    out = np.zeros(n_out, dtype=np.complex128)
    lo = max(0, -shift)
    hi = min(n_out, len(full) - shift)
    if hi > lo:
        out[lo:hi] = full[lo + shift : hi + shift]
    if phase0 != 0.0 or dphi != 0.0:
        out = rotate(out, phase0, dphi)
    return out


def rotate(samples, phase0, dphi):
    """Apply a linearly advancing carrier: samples[n] * exp(j*(phase0 + n*dphi))."""
    samples = np.ascontiguousarray(samples, dtype=np.complex128)
    n = np.arange(len(samples))
    return samples * np.exp(1j * (phase0 + dphi * n))


def cross_correlation_window(candidate, reference, lag_min, lag_max):
    """Windowed cross-correlation with time-average normalization.

    R[d] = (1 / n_overlap(d)) * sum_t candidate[t] * conj(reference[t - d])
    for d in [lag_min, lag_max].  Returns (lags, values); raises ValueError
    when a lag leaves no overlap.
    """
    cand = np.ascontiguousarray(candidate, dtype=np.complex128)
    ref = np.ascontiguousarray(reference, dtype=np.complex128)
    nc, nr = len(cand), len(ref)
    lags = np.arange(int(lag_min), int(lag_max) + 1)
    values = np.empty(len(lags), dtype=np.complex128)
    for i, d in enumerate(lags):
        t0 = max(0, d)
        t1 = min(nc, nr + d)
        if t1 <= t0:
            raise ValueError(f"empty overlap at lag {d}")
        values[i] = np.vdot(ref[t0 - d : t1 - d], cand[t0:t1]) / (t1 - t0)
    return lags, values
