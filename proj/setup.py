"""Builds the _semirep extension directly from the C++ sources.

The CMake build remains the primary path for the library, CLI, and tests;
this setup only exists so `pip install -e . --no-build-isolation` produces an
importable package without a separate CMake invocation.
"""

import glob

from pybind11.setup_helpers import Pybind11Extension, build_ext
from setuptools import setup

extension = Pybind11Extension(
    "semirep._semirep",
    sorted(glob.glob("src/*.cpp")) + ["bindings/py_module.cpp"],
    include_dirs=["include", "vendor", "/usr/include/eigen3"],
    cxx_std=20,
)

setup(ext_modules=[extension], cmdclass={"build_ext": build_ext})
