"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension: ``vgs._kernels``
falls back to a numpy implementation when the compiled module is absent.
"""

import os

from setuptools import Extension, setup

_PYX = os.path.join("src", "vgs", "_kernels", "_compiled.pyx")

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # plain-Python install still works
    ext_modules = []
else:
    if os.path.exists(_PYX):
        ext_modules = cythonize(
            [
                Extension(
                    "vgs._kernels._compiled",
                    [_PYX],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    else:
        ext_modules = []

setup(ext_modules=ext_modules)
