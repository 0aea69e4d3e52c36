import pytest
from hypothesis import settings

from helpers import random_requests, tiny_schema

settings.register_profile("repo", deadline=None, max_examples=40)
settings.load_profile("repo")


@pytest.fixture
def schema():
    return tiny_schema()


@pytest.fixture
def requests(schema):
    return random_requests(0, 12, schema)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.VERDICTS):
        terminalreporter.write_line(mod.VERDICTS[n])
