import pytest

from adaptpca.synth import rng_for

_acceptance_results: list[tuple[str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(criterion, title): exit criterion of the build")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    criterion, title = marker.args
    status = "PASS" if report.passed else "FAIL"
    _acceptance_results.append((str(criterion), title, status))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, title, status in sorted(_acceptance_results, key=lambda r: int(r[0])):
        terminalreporter.write_line(f"[{status}] criterion {criterion}: {title}")


@pytest.fixture
def rng():
    return rng_for(20241014)


@pytest.fixture
def random_matrix(rng):
    def make(s, d, rank=None):
        if rank is None:
            return rng.standard_normal((s, d)) @ rng.standard_normal((d, d))
        return rng.standard_normal((s, rank)) @ rng.standard_normal((rank, d))

    return make
