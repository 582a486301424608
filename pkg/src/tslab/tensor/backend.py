"""Kernel backend selection.

The compiled extension is used when importable; set ``TSLAB_PURE_PYTHON=1``
to force the numpy implementation (also used automatically for non-float64
inputs).
"""
from __future__ import annotations

import os

from . import _reference

try:
    if os.environ.get("TSLAB_PURE_PYTHON") == "1":
        raise ImportError("pure-python backend requested")
    from . import _kernels as _compiled
except ImportError:  # pragma: no cover - exercised when the extension is absent
    _compiled = None

reference = _reference
compiled = _compiled
active = _compiled if _compiled is not None else _reference
NAME = active.NAME


def use(name: str) -> None:
    """Switch backend at runtime (``"compiled"`` or ``"numpy"``)."""
    global active, NAME
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        active = _compiled
    elif name == "numpy":
        active = _reference
    else:
        raise ValueError(f"unknown backend {name!r}")
    NAME = active.NAME
