import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = [
    Extension(
        "wirelessbc._kernels._ckernels",
        ["src/wirelessbc/_kernels/_ckernels.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
    )
]

# Without Cython the package still installs; the pure-Python kernels are used.
ext_modules = cythonize(extensions, compiler_directives={"language_level": "3"}) if cythonize else []

setup(ext_modules=ext_modules)
