import contextlib

import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")

_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Context manager recording one acceptance criterion's outcome."""

    @contextlib.contextmanager
    def _record(number, title):
        details = {}
        try:
            yield details
        except BaseException:
            _ACCEPTANCE[number] = ("FAIL", title, details)
            raise
        _ACCEPTANCE[number] = ("PASS", title, details)

    return _record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, details = _ACCEPTANCE[number]
        info = ", ".join(f"{k}={_fmt(v)}" for k, v in details.items())
        terminalreporter.write_line(f"criterion {number}: {status} - {title}" + (f" [{info}]" if info else ""))


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{v:.4g}"
    return str(v)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
