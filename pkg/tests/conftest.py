import numpy as np
import pytest
from hypothesis import settings

from deformodo.synth import generate_sequence, make_scene

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _dataset(tmp_path_factory, name, **kw):
    out = tmp_path_factory.mktemp(name) / "data"
    generate_sequence(make_scene(**kw), out)
    return out


@pytest.fixture(scope="session")
def rigid_small(tmp_path_factory):
    """Level-0 box sequence, 6 frames at 32x32."""
    return _dataset(tmp_path_factory, "rigid", preset="box", level=0, frames=6, resolution=(32, 32), seed=4)


@pytest.fixture(scope="session")
def deforming_small(tmp_path_factory):
    return _dataset(tmp_path_factory, "deform", preset="sheet", level=2, frames=4, resolution=(32, 32), seed=4)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(LINES):
            terminalreporter.write_line(LINES[k])
