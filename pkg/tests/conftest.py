import numpy as np
import pytest

from dhrb import optics

ACCEPTANCE_LINES = []


def record_verdict(line):
    """Collect acceptance verdicts for the end-of-run summary."""
    ACCEPTANCE_LINES.append(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def config():
    return optics.OpticalConfig()


@pytest.fixture
def dh_params():
    return optics.DhPsfParams()


@pytest.fixture
def wf_params():
    return optics.WidefieldPsfParams()


@pytest.fixture
def confocal_params(wf_params):
    return optics.ConfocalPsfParams.from_widefield(wf_params)


def make_planar_scene(config, size_px, n_beads, seed, photons=(1500.0, 1500.0),
                      min_separation_um=0.6, z_jitter_um=0.05):
    """Beads jittered tightly around the focal plane, so every emitter is a
    slab truth of the z=0 section."""
    side_um = size_px * config.pixel_size_nm / 1000.0
    bounds = optics.FieldBounds(side_um, side_um, -z_jitter_um, z_jitter_um)
    return optics.generate_bead_field(n_beads, bounds, photon_range=photons,
                                      min_separation_um=min_separation_um,
                                      seed=seed)


@pytest.fixture
def planar_scene(config):
    return make_planar_scene(config, size_px=128, n_beads=10, seed=42)


def smooth_random_image(shape, seed, sigma=3.0):
    from scipy import ndimage
    rng = np.random.default_rng(seed)
    return optics.PlaneImage(ndimage.gaussian_filter(
        rng.normal(size=shape), sigma))
