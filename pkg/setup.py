import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("HYBRID_SNN_NO_EXT", "") != "1":
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "hybrid_snn._kernels._ext",
                    ["src/hybrid_snn/_kernels/_ext.pyx"],
                    include_dirs=[np.get_include()],
                    # contraction off keeps results bitwise equal to the NumPy fallback
                    extra_compile_args=["-O3", "-ffp-contract=off", "-fno-fast-math"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
