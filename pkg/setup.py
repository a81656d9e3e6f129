import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

# optional=True: a failed compile leaves the numpy fallback in charge
extensions = [
    Extension(
        "pic3d._kernels",
        ["src/pic3d/_kernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(
        extensions,
        compiler_directives={"language_level": "3"},
    )
)
