import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("OOOLAB_NO_EXT"):
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        pass
    else:
        ext_modules = cythonize(
            [Extension("ooolab._kernels", ["src/ooolab/_kernels.pyx"],
                       include_dirs=[np.get_include()],
                       extra_compile_args=["-O3", "-march=native"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
