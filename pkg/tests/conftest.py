import time

import pytest

from quantlab import cli

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: dict[int, str] = {}

_RUNS: dict[str, tuple] = {}


def shipped_run(name: str):
    """Execute a shipped config once per session; returns (RunResult, seconds)."""
    if name not in _RUNS:
        cfg, _ = cli.load_config(name)
        t0 = time.perf_counter()
        res = cli.execute(cfg)
        _RUNS[name] = (res, time.perf_counter() - t0)
    return _RUNS[name]


@pytest.fixture(scope="session")
def run_config():
    return shipped_run


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
