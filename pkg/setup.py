"""Build script for the optional compiled filter core.

The package works without the extension (a pure numpy fallback is selected
at import time), so any build failure here should not be fatal: install with
MSPLLAR_SKIP_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import Extension, setup


def extensions():
    if os.environ.get("MSPLLAR_SKIP_EXT"):
        return []
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:
        return []
    ext = Extension(
        "mspllar._ehg_cy",
        sources=["src/mspllar/_ehg_cy.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level="3")


setup(ext_modules=extensions())
