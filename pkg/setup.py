"""Build script for the optional Cython codec extension.

The package works without the extension (a NumPy fallback is selected at
import time); building it just makes the elementwise encode/fake-quant
kernels faster.  Set FP8KIT_NO_EXT=1 to skip compilation entirely.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FP8KIT_NO_EXT"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            ["src/fp8kit/_fastcodec.pyx"],
            language_level=3,
        )
    except ImportError:
        pass

setup(ext_modules=ext_modules)
