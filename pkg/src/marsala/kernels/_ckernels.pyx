# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled sample-domain kernels.

Same contracts as `_pykernels`: fused burst synthesis (sparse FIR plus
carrier rotation in one pass) and windowed cross-correlation.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport cos, sin

cnp.import_array()


def synthesize_burst(symbols, taps, int q, int n_out, int shift,
                     double phase0, double dphi):
    """Fused synthesis: out[n] = (sum_k symbols[k] * taps[n + shift - k*q])
    * exp(j*(phase0 + n*dphi))."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] a = np.ascontiguousarray(symbols, dtype=np.complex128)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] h = np.ascontiguousarray(taps, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] re = np.zeros(n_out, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] im = np.zeros(n_out, dtype=np.float64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n_out, dtype=np.complex128)
    cdef Py_ssize_t n_sym = a.shape[0]
    cdef Py_ssize_t n_tap = h.shape[0]
    cdef Py_ssize_t k, j, n, base, lo, hi
    cdef double ar, ai, hv, th, c, s
    for k in range(n_sym):
        ar = a[k].real
        ai = a[k].imag
        if ar == 0.0 and ai == 0.0:
            continue
        base = k * q - shift  # out[base + j] += a[k] * taps[j]
        lo = -base if base < 0 else 0
        hi = n_out - base if base + n_tap > n_out else n_tap
        for j in range(lo, hi):
            hv = h[j]
            re[base + j] += ar * hv
            im[base + j] += ai * hv
    if phase0 == 0.0 and dphi == 0.0:
        for n in range(n_out):
            out[n] = re[n] + 1j * im[n]
    else:
        for n in range(n_out):
            th = phase0 + dphi * n
            c = cos(th)
            s = sin(th)
            out[n] = (re[n] * c - im[n] * s) + 1j * (re[n] * s + im[n] * c)
    return out


def rotate(samples, double phase0, double dphi):
    """Apply a linearly advancing carrier: samples[n] * exp(j*(phase0 + n*dphi))."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] s = np.ascontiguousarray(samples, dtype=np.complex128)
    cdef Py_ssize_t n = s.shape[0]
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.empty(n, dtype=np.complex128)
    cdef Py_ssize_t i
    cdef double th
    cdef double complex w
    for i in range(n):
        th = phase0 + dphi * i
        w = cos(th) + 1j * sin(th)
        out[i] = s[i] * w
    return out


def cross_correlation_window(candidate, reference, int lag_min, int lag_max):
    """Windowed cross-correlation with time-average normalization."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] cand = np.ascontiguousarray(candidate, dtype=np.complex128)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] ref = np.ascontiguousarray(reference, dtype=np.complex128)
    cdef Py_ssize_t nc = cand.shape[0]
    cdef Py_ssize_t nr = ref.shape[0]
    cdef Py_ssize_t n_lags = lag_max - lag_min + 1
    cdef cnp.ndarray[cnp.int64_t, ndim=1] lags = np.arange(lag_min, lag_max + 1, dtype=np.int64)
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] values = np.empty(n_lags, dtype=np.complex128)
    cdef Py_ssize_t i, t, t0, t1, d
    cdef double accr, acci
    cdef double complex c, r
    for i in range(n_lags):
        d = lag_min + i
        t0 = d if d > 0 else 0
        t1 = nc if nc < nr + d else nr + d
        if t1 <= t0:
            raise ValueError(f"empty overlap at lag {d}")
        accr = 0.0
        acci = 0.0
        for t in range(t0, t1):
            c = cand[t]
            r = ref[t - d]
            accr += c.real * r.real + c.imag * r.imag
            acci += c.imag * r.real - c.real * r.imag
        values[i] = (accr + 1j * acci) / (t1 - t0)
    return lags, values
