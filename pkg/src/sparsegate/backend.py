"""Kernel backend selection.

The compiled extension (``sparsegate._kernels``) is preferred when it
built successfully; otherwise the pure-numpy fallback is used. Set
``SPARSEGATE_BACKEND=python`` or ``=compiled`` to force one, or pass an
explicit name to :func:`get_backend` (the ``bench`` CLI exposes this as
``--backend``).
"""

import os

from . import _kernels_py

try:
    from . import _kernels  # type: ignore[attr-defined]

    HAVE_COMPILED = True
except ImportError:
    _kernels = None
    HAVE_COMPILED = False


def get_backend(name="auto"):
    """Return the kernel module for `name` in {auto, compiled, python}."""
    if name == "auto":
        name = os.environ.get("SPARSEGATE_BACKEND", "auto")
    if name in ("auto", ""):
        return _kernels if HAVE_COMPILED else _kernels_py
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError(
                "compiled kernels requested but sparsegate._kernels is not built"
            )
        return _kernels
    if name == "python":
        return _kernels_py
    raise ValueError(f"unknown backend {name!r} (expected auto, compiled, or python)")


kernels = get_backend()

BACKEND_NAME = "compiled" if getattr(kernels, "COMPILED", False) else "python"
