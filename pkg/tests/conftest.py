import numpy as np
import pytest

from ndns.dataset import SynthConfig, synthesize_dataset
from ndns.toy_corpus import make_toy_corpus


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_sources(tmp_path_factory):
    root = tmp_path_factory.mktemp("sources")
    return make_toy_corpus(root, n_clean=3, n_noise=3, duration_s=2.0, seed=0)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory, toy_sources):
    """Four 2 s triples, shared read-only across tests."""
    out = tmp_path_factory.mktemp("data")
    clean_dir, noise_dir = toy_sources
    return synthesize_dataset(SynthConfig(segment_s=2.0, count=4, seed=3), clean_dir, noise_dir, out)


ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title = marker.args
    ACCEPTANCE_RESULTS[number] = (title, report.outcome, report.duration)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        title, outcome, duration = ACCEPTANCE_RESULTS[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d} {verdict} ({duration:6.1f} s) {title}")
