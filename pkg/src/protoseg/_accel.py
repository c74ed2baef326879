"""Numba dispatch for the hot kernels.

The env flag PROTOSEG_NUMBA selects the path at import time:

    unset / "1" / "on"  -> numba @njit kernels when numba imports cleanly
    "0" / "off" / "no"  -> pure-Python execution of the same source

Both paths run the identical function bodies (one algorithm, two
compilations), so results agree bit-for-bit; only speed differs.
``benchmarks/bench_kernels.py`` measures the gap.
"""

from __future__ import annotations

import os

_FALSY = {"0", "off", "no", "false"}


def _flag_enabled() -> bool:
    return os.environ.get("PROTOSEG_NUMBA", "1").strip().lower() not in _FALSY


NUMBA_ENABLED = False
if _flag_enabled():
    try:
        import numba  # noqa: F401

        NUMBA_ENABLED = True
    except ImportError:
        NUMBA_ENABLED = False


def maybe_jit(func):
    """Compile ``func`` with nopython numba when enabled, else return it as-is."""
    if NUMBA_ENABLED:
        from numba import njit

        return njit(cache=True, nogil=True)(func)
    return func
