"""Build script for the optional compiled kernel extension.

The package works without the extension; scoredeck.kernels falls back to
the pure-NumPy reference implementation when the compiled module is
missing (see scoredeck/kernels/__init__.py).
"""

from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "scoredeck.kernels._recurrent_cy",
                ["src/scoredeck/kernels/_recurrent_cy.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={
            "language_level": "3",
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
