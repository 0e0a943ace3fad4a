"""Builds the optional Cython kernel module.

If Cython or a C compiler is missing the package still installs; the
numpy fallback in ``casi_inpaint._fallback`` is selected at import.
"""
import os

from setuptools import setup

ext_modules = []
if not os.environ.get("CASI_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "casi_inpaint._kernels",
                    ["src/casi_inpaint/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
