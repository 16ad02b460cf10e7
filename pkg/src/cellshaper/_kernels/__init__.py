"""Gain-kernel backend selection.

The compiled Cython backend is preferred; the pure-numpy fallback is used
when the extension is unavailable. ``CELLSHAPER_BACKEND=python|cython``
forces a backend (``cython`` raises if the extension is missing).

Both backends expose the same two functions with identical semantics:
``pattern_gain_matrix`` and ``analytic_omni_matrix``; see
``gains_numpy`` for the reference documentation.
"""

import os

from . import gains_numpy

_forced = os.environ.get("CELLSHAPER_BACKEND", "").lower()

if _forced == "python":
    _impl = gains_numpy
    BACKEND = "python"
else:
    try:
        from . import _gains_cy as _impl
        BACKEND = "cython"
    except ImportError:
        if _forced == "cython":
            raise ImportError(
                "CELLSHAPER_BACKEND=cython but the compiled extension is not built")
        _impl = gains_numpy
        BACKEND = "python"

pattern_gain_matrix = _impl.pattern_gain_matrix
analytic_omni_matrix = _impl.analytic_omni_matrix


def backend_name() -> str:
    """Name of the active kernel backend: 'cython' or 'python'."""
    return BACKEND
