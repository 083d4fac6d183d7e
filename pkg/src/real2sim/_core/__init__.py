"""Kernel backend selection: compiled extension if available, numpy otherwise.

Set REAL2SIM_PURE_PYTHON=1 to force the numpy implementation.
"""

import os

if os.environ.get("REAL2SIM_PURE_PYTHON"):
    from real2sim._core.pure import chain_fk_jac

    BACKEND = "pure"
else:
    try:
        from real2sim._core.kernels import chain_fk_jac

        BACKEND = "compiled"
    except ImportError:
        from real2sim._core.pure import chain_fk_jac

        BACKEND = "pure"

__all__ = ["BACKEND", "chain_fk_jac"]
