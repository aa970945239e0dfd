import pytest

from curvquot import _backend


@pytest.fixture(params=["python", "cython"])
def kernel_module(request):
    if request.param == "cython":
        if _backend.compiled_kernels is None:
            pytest.skip("compiled kernels not built")
        return _backend.compiled_kernels
    return _backend.python_kernels
