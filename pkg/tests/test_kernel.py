import subprocess
import sys

import numpy as np
import pytest

from igame import kernel
from igame.engine import simulate
from igame.errors import EvalDomainError, SimulationError
from igame.exprlang import parse

from conftest import data_game

FALLBACK = """
import sys
class Block:
    def find_spec(self, name, path=None, target=None):
        if name == "igame._ckernel":
            raise ImportError("blocked")
sys.meta_path.insert(0, Block())
from igame import kernel
from igame.engine import simulate
from igame.model import load_game_file
from importlib.resources import files
print(kernel.backend_name(), kernel.available_backends())
print(simulate(load_game_file(str(files("igame") / "data" / "lin1.json"))).phi[-1, 0].hex())
"""


def test_python_fallback_selected_when_extension_missing(lin1):
    out = subprocess.run([sys.executable, "-c", FALLBACK], capture_output=True, text=True,
                         check=True).stdout.split("\n")
    assert out[0] == "python ['python']"
    assert out[1] == simulate(lin1).phi[-1, 0].hex()


def test_set_backend_rejects_unknown():
    with pytest.raises(ValueError):
        kernel.set_backend("fortran")


@pytest.mark.parametrize("name", ["lin1", "harmonic", "coalitions", "inverse", "still"])
def test_backends_bit_identical_on_games(name):
    g = data_game(name)
    outs = []
    for b in kernel.available_backends():
        with kernel.using(b):
            outs.append(simulate(g).to_csv())
    assert len(set(outs)) == 1


def test_faults_reported_identically():
    slot_of = {"phi[0]": 0}
    messages = set()
    for b in kernel.available_backends():
        block = kernel.Block([parse("1 + log(phi[0] - 2)")], [-1], slot_of, backend=b)
        with pytest.raises(EvalDomainError) as info:
            block.eval(np.array([1.0]), 0)
        messages.add(str(info.value))
    assert len(messages) == 1
    assert "log" in messages.pop()


def test_eval_rows_matches_eval():
    e = parse("sin(phi[0]) * exp(-t) + max(phi[0], t)^2")
    rows = np.random.default_rng(0).normal(size=(200, 2))
    for b in kernel.available_backends():
        block = kernel.Block([e], [-1], {"t": 0, "phi[0]": 1}, backend=b)
        col = block.eval_rows(rows, 0)
        assert [block.eval(r.copy(), 0) for r in rows] == col.tolist()


def test_partial_rows_identical_on_failure():
    from dataclasses import replace
    g = data_game("still")
    g = replace(g, dynamics=(parse("phi[0]^2 + 0*u[1][0]"),))
    partial = []
    for b in kernel.available_backends():
        with kernel.using(b):
            with pytest.raises(SimulationError) as info:
                simulate(replace(g, horizon=replace(g.horizon, t1=100.0)))
            partial.append(info.value.partial.to_csv())
    assert len(set(partial)) == 1
