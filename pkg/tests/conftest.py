import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import _acceptance  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not _acceptance.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for n in sorted(_acceptance.RESULTS):
        terminalreporter.write_line(_acceptance.line(n))
