import pytest

from asyncfed import kernels


@pytest.fixture(scope="session", autouse=True)
def warm_kernels():
    # trigger JIT compilation up front so timed sections measure math, not compilation
    kernels.warm_up()
