import sys
from pathlib import Path

import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=200)
settings.load_profile("default")


ACCEPTANCE = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[ACCEPTANCE] = {}


@pytest.fixture
def acceptance(request):
    """Record the outcome line of an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE]

    def record(k: int, ok: bool, detail: str):
        line = f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[k] = line
        print(line)

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash[ACCEPTANCE]
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, 10):
        terminalreporter.write_line(lines.get(k, f"criterion {k}: NOT RUN"))
