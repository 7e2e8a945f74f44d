"""Kernel selection.

The compiled ``_kernels`` extension is used when it was built; otherwise the
pure-Python module is used. Setting ``PRIOKIT_PURE_PYTHON=1`` forces the
fallback.
"""

import os

from . import _kernels_py

try:
    if os.environ.get("PRIOKIT_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-Python kernels requested")
    from . import _kernels as _impl

    BACKEND = "cython"
except ImportError:
    _impl = _kernels_py
    BACKEND = "python"

prioritized_gram_schmidt = _impl.prioritized_gram_schmidt
unipotent_block_solve = _impl.unipotent_block_solve
canonical_stage = _impl.canonical_stage

__all__ = ["BACKEND", "canonical_stage", "prioritized_gram_schmidt", "unipotent_block_solve"]
