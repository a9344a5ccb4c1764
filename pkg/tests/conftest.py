import numpy as np
import pytest

from slideprobe.backend import ToyBackend
from slideprobe.fixtures import write_fixtures
from slideprobe.pyramid import SlideStore


@pytest.fixture(scope="session")
def data_dir(tmp_path_factory):
    """Session-wide workbench data directory with all bundled fixtures."""
    root = tmp_path_factory.mktemp("workbench")
    write_fixtures(root)
    return root


@pytest.fixture(scope="session")
def slides(data_dir) -> SlideStore:
    return SlideStore(data_dir / "slides")


@pytest.fixture(scope="session")
def toy_backend() -> ToyBackend:
    return ToyBackend()


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
