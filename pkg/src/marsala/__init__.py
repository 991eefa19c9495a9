"""Slotted random-access return-link toolkit.

Waveform-level synthesis, correlation-based replica localization, coherent
combining, a closed-form model of the combined SNIR under residual sync
errors, and CRDSA/MARSALA throughput simulation.
"""

from .kernels import BACKEND as KERNEL_BACKEND

__version__ = "0.1.0"

__all__ = ["KERNEL_BACKEND", "__version__"]
