from importlib.resources import files

import pytest

from igame import kernel
from igame.model import load_game_file

DATA = files("igame") / "data"


def data_game(name: str):
    return load_game_file(str(DATA / f"{name}.json"))


def data_path(name: str) -> str:
    return str(DATA / f"{name}.json")


@pytest.fixture
def lin1():
    return data_game("lin1")


@pytest.fixture(params=kernel.available_backends())
def backend(request):
    with kernel.using(request.param):
        yield request.param


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
