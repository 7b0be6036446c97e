"""Builds the optional compiled kernel core.

The package works without the extension: regionclr.backend falls back to the
numpy kernels when the compiled module is missing or fails to build.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "regionclr._kernels_c",
                ["src/regionclr/_kernels_c.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
