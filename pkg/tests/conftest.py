"""Shared pytest hooks: collects acceptance verdicts and prints them at the end."""

ACCEPTANCE_LINES: list[str] = []


def report(number: int, title: str, passed: bool, detail: str) -> bool:
    """Record and print one verdict line for an acceptance criterion."""
    line = f"criterion {number:2d} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
