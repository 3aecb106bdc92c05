import numpy as np
import pytest

from ridgevalley import synth


@pytest.fixture(scope="session")
def core_pattern():
    return synth.generate_ridge_pattern("core", 9.0, (256, 256), seed=3)


@pytest.fixture(scope="session")
def plain_stripes():
    """Straight ridges, period 8 px, ridge orientation 30 degrees."""
    yy, xx = np.mgrid[0:192, 0:192].astype(float)
    theta = np.radians(30)
    # ridges run along theta, so the phase varies along the normal
    u = -xx * np.sin(theta) + yy * np.cos(theta)
    return np.cos(2 * np.pi * u / 8.0)
