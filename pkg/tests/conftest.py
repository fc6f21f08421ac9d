import numpy as np
import pytest

from flairhi.himap import score_map
from flairhi.phantom import PhantomSpec, generate_phantom
from flairhi.preprocess import build_intermediate, nlm_denoise, normalize_intensity, sobel_magnitude
from flairhi.wmmask import initial_segmentation, select_cluster_by_atlas


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def phantom():
    return generate_phantom(PhantomSpec.default())


@pytest.fixture(scope="session")
def chain(phantom):
    """The in-memory processing chain on the default phantom."""
    b = phantom.brain_mask
    den = nlm_denoise(phantom.flair, b)
    norm = normalize_intensity(den, b)
    sob = sobel_magnitude(norm)
    inter, hist = build_intermediate(norm, sob, b)
    hi = score_map(inter, b)
    labels = initial_segmentation([norm, normalize_intensity(phantom.t1, b)], b, 3, 0)
    wm0 = select_cluster_by_atlas(labels, phantom.wm_atlas)
    return dict(den=den, norm=norm, sob=sob, inter=inter, hist=hist, hi=hi,
                labels=labels, wm0=wm0)


ACCEPTANCE_LINES = {}


@pytest.fixture
def record():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def _record(number, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
