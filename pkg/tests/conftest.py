import pytest

_RESULTS: dict[int, tuple[str, bool, str]] = {}
_NAMES: dict[int, str] = {}


class AcceptanceRecorder:
    """Records one pass/fail line per acceptance criterion."""

    def __init__(self, number: int, title: str):
        self.number = number
        _NAMES[number] = title

    def check(self, ok: bool, detail: str) -> None:
        _RESULTS[self.number] = (_NAMES[self.number], bool(ok), detail)
        print(f"criterion {self.number:2d} {'PASS' if ok else 'FAIL'}: {_NAMES[self.number]} ({detail})")
        assert ok, detail


@pytest.fixture
def criterion():
    return AcceptanceRecorder


def pytest_terminal_summary(terminalreporter):
    if not _NAMES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_NAMES):
        title, ok, detail = _RESULTS.get(number, (_NAMES[number], False, "did not complete"))
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} ({detail})")
