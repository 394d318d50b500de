import pathlib
import sys

import pytest

sys.path.insert(0, str(pathlib.Path(__file__).parent))

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    def record(number: int, title: str, ok: bool, detail: str) -> None:
        _ACCEPTANCE.append(f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
