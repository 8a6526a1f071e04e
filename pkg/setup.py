"""Build the optional compiled simulation core.

The extension is optional: if Cython or a C compiler is unavailable the
package still installs and falls back to the pure-Python integrator.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("PNAV_NO_EXT") != "1":
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "pnav._simcore",
                    ["src/pnav/_simcore.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
