"""Select the compiled kernels when available, else the numpy fallback.

Set ``PNPFV_PURE_PYTHON=1`` to force the fallback.
"""
import logging
import os

from . import _fallback

logger = logging.getLogger(__name__)

try:
    if os.environ.get("PNPFV_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _kernels as kernels
    COMPILED = True
except ImportError as exc:  # pragma: no cover - depends on the build
    logger.debug("using numpy fallback kernels (%s)", exc)
    kernels = _fallback
    COMPILED = False

BACKEND = "compiled" if COMPILED else "python"
fallback = _fallback
