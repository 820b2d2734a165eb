"""Prints the acceptance verdict lines after the run."""
import os

os.environ.setdefault("MPLBACKEND", "Agg")

from helpers import VERDICTS  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance")
    for line in VERDICTS:
        terminalreporter.write_line(line)
