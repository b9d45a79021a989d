import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from _support import ACCEPTANCE  # noqa: E402
from hypothesis import settings  # noqa: E402

# jitted kernels compile on first use; wall-clock deadlines would flag that
settings.register_profile("suite", deadline=None)
settings.load_profile("suite")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
