import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MNOLEARN_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "mnolearn._kernels",
                    ["src/mnolearn/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        # No Cython available: install with the pure NumPy kernels only.
        ext_modules = []

setup(ext_modules=ext_modules)
