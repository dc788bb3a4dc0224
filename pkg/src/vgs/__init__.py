"""Variational-inequality solvers on gradient-type polytopal discretizations.

The package provides polytopal meshes of the unit square, a hybrid
cell/face finite-volume discretization and a conforming piecewise-linear
one, monotone active-set solvers for obstacle and unilateral-contact
problems, and a posteriori quality indicators for the discretizations.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("vgs")
except PackageNotFoundError:  # pragma: no cover - not installed
    __version__ = "0.0.0"

from .render import RenderError, emit_contour_svg

__all__ = ["__version__", "RenderError", "emit_contour_svg"]
