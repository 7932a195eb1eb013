"""Selects the filter core implementation at import time.

Preference order: compiled extension if importable, else the numpy
fallback. Set MSPLLAR_FORCE_KERNEL=python|compiled to override (mainly for
benchmarks and parity tests).
"""

import os

from . import _ehg_py

_forced = os.environ.get("MSPLLAR_FORCE_KERNEL", "").lower()

if _forced == "python":
    ehg_filter_core = _ehg_py.ehg_filter_core
    KERNEL = "python"
else:
    try:
        from ._ehg_cy import ehg_filter_core

        KERNEL = "compiled"
    except ImportError:
        if _forced == "compiled":
            raise
        ehg_filter_core = _ehg_py.ehg_filter_core
        KERNEL = "python"


def available_kernels():
    """Name -> callable for every importable core (used by benchmarks)."""
    kernels = {"python": _ehg_py.ehg_filter_core}
    try:
        from ._ehg_cy import ehg_filter_core as compiled

        kernels["compiled"] = compiled
    except ImportError:
        pass
    return kernels
