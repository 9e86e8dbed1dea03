"""Builds the optional fused convolution kernels.

The package is fully functional without them (svlab.tensor falls back to a
numpy implementation); the extension exists because desk-scale training is
convolution-bound on CPU.
"""
import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    from pybind11.setup_helpers import Pybind11Extension
except ImportError:  # building without pybind11: install pure-python package
    Pybind11Extension = None


class OptionalBuildExt(build_ext):
    """Skip the extension instead of failing the whole install."""

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - toolchain dependent
            print(f"warning: building {ext.name} failed ({exc}); "
                  "svlab will use the numpy convolution fallback",
                  file=sys.stderr)


ext_modules = []
if Pybind11Extension is not None:
    ext_modules.append(
        Pybind11Extension(
            "svlab._kernels",
            ["src/svlab/_kernels.cpp"],
            cxx_std=14,
            extra_compile_args=["-O3", "-march=native", "-fopenmp"],
            extra_link_args=["-fopenmp"],
        )
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
