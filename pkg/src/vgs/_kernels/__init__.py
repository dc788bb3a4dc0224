"""Backend dispatch for the per-cell assembly kernels.

A compiled extension is used when present; otherwise the numpy
implementation serves as a drop-in replacement.  Set the environment
variable ``VGS_PURE_PYTHON=1`` to force the numpy backend.
"""

import os

from . import _numpy

if os.environ.get("VGS_PURE_PYTHON"):
    _backend = _numpy
else:
    try:
        from . import _compiled as _backend  # type: ignore[attr-defined]
    except ImportError:
        _backend = _numpy

BACKEND = _backend.NAME

assemble_coo = _backend.assemble_coo
cell_gradients = _backend.cell_gradients
stab_residuals = _backend.stab_residuals
pyramid_gradients = _backend.pyramid_gradients
fluxes = _backend.fluxes

__all__ = [
    "BACKEND",
    "assemble_coo",
    "cell_gradients",
    "stab_residuals",
    "pyramid_gradients",
    "fluxes",
]
