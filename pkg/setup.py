from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
    import numpy as np
except ImportError:  # build without the compiled core; the fallback is used
    ext_modules = []
else:
    ext_modules = cythonize(
        [Extension("icps._kernels", ["src/icps/_kernels.pyx"],
                   include_dirs=[np.get_include()])],
        language_level="3",
    )

setup(ext_modules=ext_modules)
