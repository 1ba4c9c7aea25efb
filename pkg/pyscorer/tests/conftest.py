from __future__ import annotations

import subprocess
import sys
from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parents[2]
SHARED_FIXTURES = REPO_ROOT / "fixtures"


@pytest.fixture(scope="session")
def shared_fixtures() -> Path:
    return SHARED_FIXTURES


@pytest.fixture(scope="session")
def vocab_path() -> Path:
    return SHARED_FIXTURES / "vocab_default.txt"


def run_pyscorer(args, stdin=None, timeout=60):
    """Run the scorer CLI in a subprocess and capture its output."""
    return subprocess.run(
        [sys.executable, "-m", "pyscorer", *args],
        capture_output=True, text=True, input=stdin, timeout=timeout)


@pytest.fixture(scope="session")
def cli():
    return run_pyscorer
