import os

from setuptools import setup
from setuptools.command.build_ext import build_ext

try:
    from Cython.Build import cythonize
    from setuptools import Extension
except ImportError:
    cythonize = None


class OptionalBuildExt(build_ext):
    """Build the compiled kernel when possible; fall back to pure Python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, headers missing, ...
            self.warn(f"compiled kernel not built ({exc}); using the Python fallback")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            self.warn(f"failed to build {ext.name} ({exc}); using the Python fallback")


ext_modules = []
if cythonize is not None and os.environ.get("IGAME_NO_EXT") != "1":
    ext_modules = cythonize(
        [Extension(
            "igame._ckernel",
            ["src/igame/_ckernel.pyx"],
            # no contraction into FMA: results must match the Python fallback bit for bit
            extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
        )],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules, cmdclass={"build_ext": OptionalBuildExt})
