"""Select the kernel implementation once, at import time.

The compiled Cython module is preferred. Setting ``PCVIT_PURE_PYTHON=1`` in
the environment forces the numpy fallback, which is also used whenever the
extension has not been built.
"""

import logging
import os

logger = logging.getLogger(__name__)

if os.environ.get("PCVIT_PURE_PYTHON", "").strip() not in ("", "0"):
    from pcvit import _kernels_py as kernels

    COMPILED = False
else:
    try:
        from pcvit import _kernels as kernels

        COMPILED = True
    except ImportError:
        logger.debug("compiled kernels unavailable, using numpy fallback")
        from pcvit import _kernels_py as kernels

        COMPILED = False

BACKEND = "cython" if COMPILED else "numpy"

__all__ = ["kernels", "COMPILED", "BACKEND", "env_threads"]


def env_threads() -> int:
    """Worker count from ``PCVIT_THREADS``; unset or invalid means 1."""
    raw = os.environ.get("PCVIT_THREADS", "").strip()
    try:
        return max(1, int(raw)) if raw else 1
    except ValueError:
        logger.warning("ignoring non-integer PCVIT_THREADS=%r", raw)
        return 1
