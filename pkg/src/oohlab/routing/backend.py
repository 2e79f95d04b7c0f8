"""Kernel backend selection.

The compiled extension is used when importable; setting ``OOHLAB_PURE=1``
forces the pure-Python kernels.  :func:`use_backend` switches at runtime
(tests and the benchmark compare both).
"""
import logging
import os

from . import _pycore

log = logging.getLogger(__name__)

try:
    from . import _core as _compiled
except ImportError:  # extension not built
    _compiled = None

kernels = _pycore
name = "python"


def available() -> list[str]:
    return ["python"] + (["compiled"] if _compiled is not None else [])


def use_backend(which: str) -> None:
    global kernels, name
    if which == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled routing kernels are not built")
        kernels, name = _compiled, "compiled"
    elif which == "python":
        kernels, name = _pycore, "python"
    else:
        raise ValueError(f"unknown backend {which!r}")


if _compiled is not None and not os.environ.get("OOHLAB_PURE"):
    use_backend("compiled")
else:
    if _compiled is None:
        log.debug("compiled routing kernels unavailable; using pure Python")
