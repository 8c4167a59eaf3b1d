"""Build the optional Cython kernels.

If Cython or a C compiler is unavailable the package still installs and
``biounet.kernels`` falls back to its numpy implementations.
"""
import os

from setuptools import setup


def _extensions():
    if os.environ.get("BIOUNET_NO_EXT"):
        return []
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        return []
    ext = Extension(
        "biounet._ckernels",
        ["src/biounet/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"}, quiet=True)


setup(ext_modules=_extensions())
