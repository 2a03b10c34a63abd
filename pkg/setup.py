"""Builds the optional compiled Gibbs-sampling kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failed build here is not fatal for pure-Python installs:
run ``pip install -e . --no-build-isolation`` and check
``gumbolt.kernels.BACKEND`` to see which implementation got picked up.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gumbolt.kernels._gibbs",
                ["src/gumbolt/kernels/_gibbs.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )
except ImportError:
    ext_modules = []

setup(ext_modules=ext_modules)
