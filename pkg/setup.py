"""Build script for the optional compiled solver kernel.

The package works without the extension (a pure-NumPy fallback is selected
at import time); building it just makes the hot QP iteration loop faster.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "gapracer._ptc_kernel",
                sources=["src/gapracer/_ptc_kernel.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    # No Cython at build time: install pure-Python only.
    pass

setup(ext_modules=ext_modules)
