import os

from setuptools import setup

ext_modules = []
if os.environ.get("TAGREG_NO_EXT", "0") in ("", "0"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("tagreg.vm._cvm", ["src/tagreg/vm/_cvm.pyx"], extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
