"""Build script: compiles the optional GMP-backed modular-arithmetic kernel.

The extension is a speed kernel only. If Cython or the GMP headers are
missing, the build degrades to the pure-Python backend in
``cipherfed.modmath`` and everything still works (just slower).
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Let the extension build fail without failing the install."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler or header missing
            warnings.warn(f"compiled kernel skipped ({exc}); using pure-Python backend")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"compiled kernel skipped ({exc}); using pure-Python backend")


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        warnings.warn("Cython not available; using pure-Python backend")
        return []
    return cythonize(
        [
            Extension(
                "cipherfed._modcore",
                ["src/cipherfed/_modcore.pyx"],
                libraries=["gmp"],
            )
        ],
        language_level="3",
    )


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
