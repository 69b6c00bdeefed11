"""Shared test infrastructure: the acceptance suite registers one summary
line per criterion here so the verdicts stay visible in the terminal report."""

ACCEPTANCE_LINES: list[tuple[int, str, bool]] = []


def record_criterion(number: int, description: str, passed: bool) -> None:
    ACCEPTANCE_LINES.append((number, description, passed))
    status = "PASS" if passed else "FAIL"
    print(f"[criterion {number}] {status} - {description}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number, description, passed in sorted(ACCEPTANCE_LINES):
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"[criterion {number}] {status} - {description}")
