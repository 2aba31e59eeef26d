import pytest

from ubm import tensor as T


@pytest.fixture(autouse=True)
def _finite_checks():
    T.set_finite_checks(True)
    yield
    T.set_finite_checks(False)
