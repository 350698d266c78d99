import numpy as np
import pytest

from kdvdbar.harness import ExperimentConfig, scattering_for
from kdvdbar.phase import RTable
from kdvdbar.scattering import ScatteringData, compute_scattering_data, named_potential


@pytest.fixture(scope="session")
def sd_default() -> ScatteringData:
    """Scattering data of the default datum ``-0.5 exp(-(x/2)^2)``."""
    return scattering_for(ExperimentConfig())


@pytest.fixture(scope="session")
def table_default(sd_default) -> RTable:
    return RTable.from_scattering(sd_default)


@pytest.fixture(scope="session")
def sd_one_soliton() -> ScatteringData:
    p = named_potential("sech2", L=20.0, h=0.01, amplitude=2.0)
    return compute_scattering_data(p, 6.0, 0.01, N=1, tol=1e-13)


@pytest.fixture(scope="session")
def sd_two_soliton() -> ScatteringData:
    """Closed-form data of ``-6 sech^2 x``: kappa = 1, 2 with gamma^2 = 6, 12."""
    w = np.linspace(-6, 6, 1201)
    return ScatteringData([1.0, 2.0], [6.0, 12.0], w, np.zeros_like(w, dtype=complex), 1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
