import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "cve_gnn._kernels._csr",
                ["src/cve_gnn/_kernels/_csr.pyx"],
                include_dirs=[numpy.get_include()],
            )
        ],
        language_level="3",
    )
except ImportError:
    # No Cython at build time: install pure-python; the numpy fallback
    # backend is selected automatically at import.
    ext_modules = []

setup(ext_modules=ext_modules)
