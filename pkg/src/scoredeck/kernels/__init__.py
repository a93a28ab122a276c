"""Recurrent kernel backend selection.

The compiled Cython kernels are used when built; otherwise the pure-NumPy
reference implementation takes over.  SCOREDECK_KERNELS=python forces the
fallback, SCOREDECK_KERNELS=cython fails loudly when the extension is
missing.  benchmarks/bench_kernels.py compares the two.
"""

import os

from . import reference

_requested = os.environ.get("SCOREDECK_KERNELS", "auto")
if _requested not in ("auto", "cython", "python"):
    raise ValueError(f"SCOREDECK_KERNELS must be auto|cython|python, got {_requested!r}")

_compiled = None
if _requested in ("auto", "cython"):
    try:
        from . import _recurrent_cy as _compiled
    except ImportError:
        if _requested == "cython":
            raise
        _compiled = None

if _compiled is not None:
    BACKEND = "cython"
    lstm_forward = _compiled.lstm_forward
    lstm_backward = _compiled.lstm_backward
else:
    BACKEND = "python"
    lstm_forward = reference.lstm_forward
    lstm_backward = reference.lstm_backward


def get_backend(name: str):
    """Return (lstm_forward, lstm_backward) for an explicit backend name."""
    if name == "python":
        return reference.lstm_forward, reference.lstm_backward
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled.lstm_forward, _compiled.lstm_backward
    raise ValueError(f"unknown backend {name!r}")
