import pytest

from emanakey import build_reference_set, get_preset


@pytest.fixture(scope="session")
def refs():
    return build_reference_set("analytic")


@pytest.fixture(scope="session")
def identity_preset():
    return get_preset("identity")
