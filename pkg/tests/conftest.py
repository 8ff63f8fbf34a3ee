"""Shared test plumbing: collects acceptance pass/fail lines and prints
them in the terminal summary so they are visible in any pytest run."""

acceptance_lines = []


def record(line: str) -> None:
    acceptance_lines.append(line)
    print(line, flush=True)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_lines:
            terminalreporter.write_line(line)
