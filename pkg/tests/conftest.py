"""Pytest wiring: collects acceptance-criterion verdict lines and prints
them as one block at the end of the run."""

criterion_lines: list[str] = []


def record_criterion(line: str) -> None:
    criterion_lines.append(line)


def pytest_terminal_summary(terminalreporter):
    if criterion_lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(criterion_lines):
            terminalreporter.write_line(line)
