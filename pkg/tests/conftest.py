import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def report_line():
    """Record ``PASS/FAIL  <criterion>  <detail>``; the lines are echoed in the terminal summary."""

    def record(label, passed, detail):
        line = f"{'PASS' if passed else 'FAIL'}  {label}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].strip("[]").rstrip(":").split(".")[0])):
            terminalreporter.write_line(line)
