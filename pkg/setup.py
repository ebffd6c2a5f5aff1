"""Build script for the compiled sampling kernels.

The extension is optional: if no C compiler (or Cython) is available the
install still succeeds and the package falls back to the numpy kernels in
``bevtrack._kernels.fallback`` at import time.
"""

import sys
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext

try:
    import numpy
    from Cython.Build import cythonize
except ImportError:  # pragma: no cover - build environment without cython
    numpy = None
    cythonize = None


class OptionalBuildExt(build_ext):
    """Try to build the extension, but never fail the install over it."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover
            warnings.warn(f"skipping compiled kernels ({exc}); using numpy fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            warnings.warn(f"skipping compiled kernels ({exc}); using numpy fallback")


def extensions():
    if cythonize is None or numpy is None:  # pragma: no cover
        return []
    # -ffp-contract=off: the fallback kernels must stay bit-identical to the
    # compiled ones, so FMA contraction has to be disabled.
    compile_args = ["-O3"]
    if not sys.platform.startswith("win"):
        compile_args.append("-ffp-contract=off")
    ext = Extension(
        "bevtrack._kernels._core",
        sources=["src/bevtrack/_kernels/_core.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=compile_args,
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    return cythonize([ext], language_level=3)


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
