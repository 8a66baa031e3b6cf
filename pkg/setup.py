import os

import numpy as np
from setuptools import Extension, setup

# Set HSA_ICP_NO_EXT=1 to install without the compiled kernel (pure-Python fallback).
ext_modules = []
if not os.environ.get("HSA_ICP_NO_EXT"):
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "hsaicp._kdtree",
                ["src/hsaicp/_kdtree.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                # no FMA contraction: distances must match the Python kernel bit for bit
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
