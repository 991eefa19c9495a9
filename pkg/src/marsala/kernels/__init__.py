"""Hot sample-domain kernels with a compiled core and a numpy fallback.

The compiled extension (`_ckernels`, built from Cython) implements the
inner loops that dominate waveform Monte Carlo runtime: burst synthesis
fused with the carrier rotation, and windowed cross-correlation.  A
pure-numpy implementation with identical semantics lives in `_pykernels`
and is selected automatically when the extension is not built.

Set ``MARSALA_BACKEND=python`` to force the fallback, or
``MARSALA_BACKEND=cython`` to fail loudly if the extension is missing.
Both backends agree to near machine precision; ``tests/test_kernels.py``
asserts it and ``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

_requested = os.environ.get("MARSALA_BACKEND", "auto").lower()

if _requested not in ("auto", "cython", "python"):
    raise RuntimeError(f"MARSALA_BACKEND must be auto|cython|python, got {_requested!r}")

if _requested in ("auto", "cython"):
    try:
        from ._ckernels import (  # noqa: F401
            cross_correlation_window,
            rotate,
            synthesize_burst,
        )

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise
        from ._pykernels import (  # noqa: F401
            cross_correlation_window,
            rotate,
            synthesize_burst,
        )

        BACKEND = "python"
else:
    from ._pykernels import (  # noqa: F401
        cross_correlation_window,
        rotate,
        synthesize_burst,
    )

    BACKEND = "python"

__all__ = [
    "BACKEND",
    "cross_correlation_window",
    "rotate",
    "synthesize_burst",
]
