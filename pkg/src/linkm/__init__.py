"""Numerical evaluation of a triple-linking invariant of three-component links
and of its asymptotic counterpart for magnetic fields in tubes."""

import os

# LINKM_THREADS caps the numba worker pool; it must be set before numba loads.
_threads = os.environ.get("LINKM_THREADS")
if _threads:
    os.environ["NUMBA_NUM_THREADS"] = str(max(1, int(_threads)))
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
