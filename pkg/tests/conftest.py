import numpy as np
import pytest

from altmap.raster_io import RasterStack


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_stack(rng, bands=3, height=5, width=4, nodata=None):
    data = rng.random((bands, height, width)).astype(np.float32)
    return RasterStack(data, (500000.0, 30.0, 0.0, 6500000.0, 0.0, -30.0), "EPSG:32754", nodata)


@pytest.fixture
def small_stack(rng):
    return random_stack(rng)


ACCEPTANCE_LINES = []


def record_acceptance(name, ok, detail=""):
    """Remember one acceptance verdict (``ok=None`` for a skipped check); all are printed after the run."""
    verdict = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
    line = f"ACCEPTANCE {name}: {verdict}"
    if detail:
        line += f" ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
