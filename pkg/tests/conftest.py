import numpy as np
import pytest

from ddptycho.forward import ScanGeometry
from ddptycho.sim import (ZonePlateParams, border_mask, make_sample, make_test_images,
                          make_zone_plate_probe, simulate_frames)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_complex(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


class Toy:
    """64x64 sample, 16x16 probe, step 4, vacuum band of 4 pixels."""

    def __init__(self, size=64, side=16, step=4, margin=4, flux=1e4, seed=0):
        self.geometry = ScanGeometry.raster((size, size), side, step)
        self.vacuum = border_mask((size, size), margin)
        mag, phase = make_test_images((size, size), seed)
        self.sample = make_sample(mag, phase, self.vacuum)
        self.probe = make_zone_plate_probe(side, ZonePlateParams(defocus=0.4, flux=flux))
        self.frames = simulate_frames(self.probe, self.sample, self.geometry)


@pytest.fixture(scope="session")
def toy():
    return Toy()


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
