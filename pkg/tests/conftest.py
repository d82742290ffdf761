import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from tiltforge import phantom
from tiltforge.core import PerTiltStats, ProjectionStack, evenly_spaced_geometry
from tiltforge.noise import NoiseModel, match_moments, simulate_noisy
from tiltforge.radon import forward_project


@pytest.fixture(scope="session")
def geom61():
    return evenly_spaced_geometry(-60, 60, 61)


@pytest.fixture(scope="session")
def noiseless61(geom61):
    """61x64x64 noiseless projections of a particle phantom."""
    vol = phantom.scattered_particles((64, 64, 64), n_particles=40, seed=1)
    return forward_project(vol, geom61)


@pytest.fixture(scope="session")
def other_noiseless61(geom61):
    vol = phantom.scattered_particles((64, 64, 64), n_particles=40, seed=2)
    return forward_project(vol, geom61)


@pytest.fixture(scope="session")
def model61(geom61):
    th = geom61.as_array()
    # brighter, wider spread towards high tilt, loosely like detector data
    mean = 100.0 - 0.004 * th**2
    std = 10.0 + 0.001 * th**2
    return NoiseModel(geom61.angles_deg, PerTiltStats(tuple(mean), tuple(std)), (0.0005, 0.0, 1.0), 2.0)


@pytest.fixture(scope="session")
def style61(other_noiseless61, model61):
    """Stand-in for detector projections of a different tomogram: correlated noise."""
    noisy = simulate_noisy(other_noiseless61, model61, 1.0, seed=5)
    blurred = np.stack([gaussian_filter(img, 1.0) for img in noisy.data])
    return match_moments(ProjectionStack(blurred, noisy.geometry), model61.target_stats)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
