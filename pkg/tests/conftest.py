from pathlib import Path

import numpy as np
import pytest

FIXTURES = Path(__file__).parent / "fixtures"

NATURAL_COLOR = ["astronaut", "chelsea", "coffee", "rocket", "ihc"]


def fixture_path(name: str) -> Path:
    return FIXTURES / name


def load_fixture(name: str) -> np.ndarray:
    from jpegexplore.image_io import load_image
    return load_image(FIXTURES / name)


@pytest.fixture(scope="session")
def natural_images():
    return {name: load_fixture(f"{name}.png") for name in NATURAL_COLOR}


@pytest.fixture(scope="session")
def camera_gray():
    return load_fixture("camera.png")


@pytest.fixture()
def rng():
    return np.random.default_rng(20240817)
