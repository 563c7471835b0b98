import numpy as np
import pytest

from fe2nn.data import SamplingSpec, generate_dataset, sample_deformation_gradients
from fe2nn.fem import structured_mesh
from fe2nn.mlp import TrainingConfig, fit_surrogate
from fe2nn.rve import RveProblem, inclusion_rve
from fe2nn.tensors import MaterialParams

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_mat():
    return MaterialParams(1.0, 1.0)


@pytest.fixture(scope="session")
def homog_rve(unit_mat):
    return RveProblem(structured_mesh(2, 2), unit_mat, "periodic")


@pytest.fixture(scope="session")
def two_phase_rve():
    return inclusion_rve(4, bc_mode="periodic")


def _train(rve, seed=0, n=500, amplitude=0.15):
    samples = sample_deformation_gradients(SamplingSpec(n, amplitude, 0.5, seed))
    data, failures = generate_dataset(rve, samples)
    assert not failures
    net, report = fit_surrogate(data.F, data.P, (16, 16), TrainingConfig(max_iterations=500, target_mse=1e-7),
                                amplitude=amplitude)
    return data, net, report


@pytest.fixture(scope="session")
def homog_surrogate(homog_rve):
    """(dataset, network, report) for the homogeneous cell, 500 samples, eps = 0.15."""
    return _train(homog_rve)


@pytest.fixture(scope="session")
def two_phase_surrogate(two_phase_rve):
    return _train(two_phase_rve)
