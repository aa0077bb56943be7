import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    from delaylens.fixture import write_fixture

    out = tmp_path_factory.mktemp("fixture")
    write_fixture(out, seed=7)
    return out


# one summary line per acceptance criterion --------------------------------

_CRITERIA = []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        title = (item.function.__doc__ or item.name).strip().splitlines()[0]
        _CRITERIA.append((marker.args[0], status, title))


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, title in sorted(_CRITERIA):
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {title}")
