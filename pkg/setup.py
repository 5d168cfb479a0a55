"""Build the optional Cython reduction kernel.

If Cython or a C++ compiler is missing the package still installs and the
pure-Python reduction is used instead.
"""

import warnings

from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None


class optional_build_ext(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:
            warnings.warn(f"compiled kernel not built ({exc}); using the Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"building {ext.name} failed ({exc}); using the Python fallback")


ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        ["src/toporfm/tda/_reduce.pyx"],
        compiler_directives={"language_level": "3"},
        quiet=True,
    )
    for ext in ext_modules:
        ext.extra_compile_args = ["-O3", "-std=c++11"]

setup(ext_modules=ext_modules, cmdclass={"build_ext": optional_build_ext})
