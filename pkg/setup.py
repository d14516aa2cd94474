"""Build script for the optional compiled kernels.

The package works without the extension; ``navstack.kernels`` falls back to
the pure-Python implementation when ``navstack._kernels`` is not importable.
"""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("NAVSTACK_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [
                Extension(
                    "navstack._kernels",
                    ["src/navstack/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    # keep float results bit-identical to the Python fallback: no FMA
                    # contraction, and no merging of sin/cos into sincos (which rounds
                    # differently in the last bit for some arguments)
                    extra_compile_args=["-O3", "-fno-fast-math", "-ffp-contract=off",
                                        "-fno-builtin-sin", "-fno-builtin-cos"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
