import pytest

from fleetrepo.config import RunConfig


def tiny_config(**sections) -> RunConfig:
    """Small world that runs an episode in well under a second."""
    base = RunConfig().replace(
        world={"width": 4, "height": 4, "steps": 12, "fleet": 8},
        demand={"hotspots": "1:1:1.0:0.9;3:2:0.8:0.9", "history_days": 2, "base_intensity": 0.05},
        agents={"hidden": 16, "n_max": 4},
        run={"episodes": 2, "checkpoint_every": 1, "eval_seeds": (1, 2)},
    )
    return base.replace(**sections).validate()


@pytest.fixture
def tiny():
    return tiny_config()


# --- acceptance summary: one PASS/FAIL line per criterion ----------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.when == "call" or rep.failed or rep.skipped:
        status = "FAIL" if rep.failed else "SKIP" if rep.skipped else "PASS"
        prev = _CRITERIA.get(number, (title, "PASS"))[1]
        worst = max(prev, status, key=["PASS", "SKIP", "FAIL"].index)
        _CRITERIA[number] = (title, worst)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:>2} {status}: {title}")
