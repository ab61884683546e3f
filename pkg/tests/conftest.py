import warnings

import numpy as np
import pytest
from hypothesis import settings

from jmgtlab.model import CoefficientField, Cutoff, SpatialProfile, TimeProfile, build_excitation
from jmgtlab.spectral import Grid, build_basis

settings.register_profile("repo", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("repo")

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def grid1d():
    return Grid((np.pi,), (64,))


@pytest.fixture(scope="session")
def basis16(grid1d):
    return build_basis(grid1d, 1.0, 1.0, 16)


@pytest.fixture(scope="session")
def background(grid1d):
    return CoefficientField.on_grid(grid1d, tau=0.1, b0=1.0)


@pytest.fixture(scope="session")
def chi():
    return Cutoff(1e-3, 5e-3)


@pytest.fixture(scope="session")
def excitation(basis16, background):
    phi = SpatialProfile.from_modes(basis16, [1.0])
    psi = TimeProfile(4, 2.0, 1.0)
    return phi, psi, build_excitation(phi, psi, background, basis16)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
