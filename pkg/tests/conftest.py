"""Shared fixtures: the acceptance reporter prints one verdict line per
criterion, inline and again in the terminal summary."""

import pytest

_ACCEPTANCE: list[tuple[str, str]] = []


@pytest.fixture
def acceptance(capsys):
    def record(criterion: str, passed: bool, detail: str) -> None:
        line = f"acceptance {criterion}: {'PASS' if passed else 'FAIL'} | {detail}"
        _ACCEPTANCE.append((criterion, line))
        with capsys.disabled():
            print("\n" + line, flush=True)

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE, key=lambda t: (int(t[0].split('-')[0]), t[0])):
            terminalreporter.write_line(line)
