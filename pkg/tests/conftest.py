from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cropopt import beacon_image, build_pyramid

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def beacon256():
    return beacon_image(256, 256)


@pytest.fixture(scope="session")
def beacon_pyramid(beacon256):
    return build_pyramid(beacon256, (0.25, 1.0 / 3.0, 0.5, 1.0))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)


def run_cli(args, cwd=None, env=None, stdin=None, timeout=240):
    """Run the command-line tool in a subprocess and capture its output."""
    return subprocess.run(
        [sys.executable, "-m", "cropopt.cli", *args],
        capture_output=True, text=True, cwd=cwd, env=env, input=stdin,
        timeout=timeout)


@pytest.fixture(scope="session")
def cli():
    return run_cli


_ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


@pytest.fixture()
def acceptance():
    """Record one acceptance criterion outcome and fail the test if not met.

    Every recorded criterion is echoed as a PASS/FAIL line in the terminal
    summary so a single test run documents the full checklist.
    """

    def record(name: str, ok: bool, detail: str = "") -> None:
        _ACCEPTANCE_RESULTS.append((name, bool(ok), detail))
        assert ok, f"acceptance criterion {name!r} failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE_RESULTS:
        status = "PASS" if ok else "FAIL"
        line = f"{status} {name}"
        if detail:
            line += f": {detail}"
        terminalreporter.write_line(line)
