import pytest

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record(request):
    """Record one acceptance line; printed in the terminal summary."""
    number = int(request.node.name.split("_")[1])

    def _record(n: int, ok: bool, title: str, detail: str) -> None:
        ACCEPTANCE[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {title}: {detail}"

    yield _record
    ACCEPTANCE.setdefault(number, f"[FAIL] criterion {number}: {request.node.name} raised before reporting")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
