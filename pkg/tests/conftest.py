import pytest

from causalcast import discovery

# Every LaggedGraph built during the session, audited by the last test.
RECORDED_GRAPHS = []
# (criterion, description, status, detail) lines from the acceptance module
ACCEPTANCE_LINES = []

_orig_post_init = discovery.LaggedGraph.__post_init__


def _recording_post_init(self):
    _orig_post_init(self)
    RECORDED_GRAPHS.append(self)


discovery.LaggedGraph.__post_init__ = _recording_post_init


def pytest_collection_modifyitems(session, config, items):
    # the temporal audit must see the graphs of every other test
    last = [it for it in items if it.get_closest_marker("run_last")]
    rest = [it for it in items if not it.get_closest_marker("run_last")]
    items[:] = rest + last


def pytest_configure(config):
    config.addinivalue_line("markers", "run_last: run after every other collected test")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
        terminalreporter.write_line(line)


@pytest.fixture
def recorded_graphs():
    return RECORDED_GRAPHS
