"""Backend selection for the recurrent kernels.

The compiled extension is used when it imports; set ``IRECGAN_PURE_PYTHON=1``
to force the numpy fallback.
"""
from __future__ import annotations

import os

from . import _gru_py

BACKEND = "python"
gru_forward = _gru_py.gru_forward
gru_backward = _gru_py.gru_backward

if not os.environ.get("IRECGAN_PURE_PYTHON"):
    try:
        from . import _gru_ext
    except ImportError:
        _gru_ext = None
    else:
        BACKEND = "compiled"
        gru_forward = _gru_ext.gru_forward
        gru_backward = _gru_ext.gru_backward


def get_backend(name: str):
    """Return ``(forward, backward)`` for ``"python"`` or ``"compiled"``."""
    if name == "python":
        return _gru_py.gru_forward, _gru_py.gru_backward
    if name == "compiled":
        from . import _gru_ext as ext

        return ext.gru_forward, ext.gru_backward
    raise ValueError(f"unknown backend {name!r}")
