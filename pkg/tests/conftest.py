import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS, summary_lines

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in summary_lines():
            terminalreporter.write_line(line)
