from setuptools import setup, Extension

# The compiled spot-rendering kernel is optional: if Cython (or a C toolchain)
# is unavailable the package falls back to the numpy implementation selected
# at import time in dhrb.kernels.
try:
    from Cython.Build import cythonize
    import numpy as np

    extensions = cythonize(
        [
            Extension(
                "dhrb.kernels._lobes_c",
                ["src/dhrb/kernels/_lobes_c.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
