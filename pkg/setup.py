"""Build the optional compiled kernels; tslab falls back to numpy without them."""
import os

from setuptools import setup

ext_modules = []
if os.environ.get("TSLAB_NO_EXT") != "1":
    try:
        import numpy as np
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "tslab.tensor._kernels",
                    ["src/tslab/tensor/_kernels.pyx"],
                    include_dirs=[np.get_include(), "src/tslab/tensor"],
                    extra_compile_args=["-O3", "-march=native", "-fno-math-errno"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
