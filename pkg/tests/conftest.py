import numpy as np
import pytest

from coinbow.synth import generate_synthetic_dataset


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """30 upright synthetic coins (10 per class) with the default noise."""
    root = tmp_path_factory.mktemp("small")
    manifest = generate_synthetic_dataset(root, 10, rotation_range=0.0, seed=3)
    return root, manifest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record and print one PASS/FAIL line for an acceptance criterion.

    Usage: ``criterion(3, ok, "detail text")``. The line is printed straight to
    the terminal and repeated in the end-of-run summary.
    """
    store = request.config.stash.setdefault(_CRITERIA, {})
    capman = request.config.pluginmanager.getplugin("capturemanager")

    def report(number, ok, detail):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        store[number] = line
        with capman.global_and_fixture_disabled():
            print("\n" + line, flush=True)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_CRITERIA, {})
    if store:
        terminalreporter.section("acceptance criteria")
        for number in sorted(store):
            terminalreporter.write_line(store[number])
