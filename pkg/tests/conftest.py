import pytest

from quadforge import domains


@pytest.fixture(scope="session")
def square_mesh():
    return domains.square(16)


@pytest.fixture(scope="session")
def disk_mesh():
    return domains.disk()


@pytest.fixture(scope="session")
def annulus_mesh():
    return domains.annulus()


@pytest.fixture(scope="session")
def smd_mesh():
    return domains.square_minus_disk()


@pytest.fixture(scope="session")
def all_domains(square_mesh, disk_mesh, annulus_mesh, smd_mesh):
    return {
        "square": square_mesh,
        "disk": disk_mesh,
        "annulus": annulus_mesh,
        "square_minus_disk": smd_mesh,
    }
