"""Build script for the optional compiled box-ops kernels.

The package is fully functional without the extension: ``rgbdet.boxops``
falls back to the pure-numpy implementation when ``rgbdet.boxops._kernels``
is not importable.  Any failure while building the extension therefore
degrades to a warning instead of failing the install.
"""

import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that downgrades compiler failures to a warning."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            warnings.warn(f"skipping compiled box-ops kernels: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover - depends on toolchain
            warnings.warn(f"skipping {ext.name}: {exc}")


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError:  # pragma: no cover - depends on environment
        return []
    return cythonize(
        [
            Extension(
                "rgbdet.boxops._kernels",
                ["src/rgbdet/boxops/_kernels.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(ext_modules=make_extensions(), cmdclass={"build_ext": optional_build_ext})
