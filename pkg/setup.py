"""Build hook for the optional compiled trajectory kernel.

The package is fully functional without the extension; if Cython or a C
compiler is missing the build proceeds and the pure-numpy loop is used.
"""

from setuptools import Extension, setup

try:
    import numpy
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "gmkf._backend._cyloop",
                ["src/gmkf/_backend/_cyloop.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
                optional=True,
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
