import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igame.engine import simulate
from igame.epsilon import IDENTIFIED, UNIDENTIFIABLE, recover_epsilon
from igame.errors import ConfigError
from igame.model import load_game, with_eps_truth
from igame.trajectory import Trajectory

from conftest import data_game


def single_sample(u, uo, phi):
    g = load_game({
        "name": "single", "state_dim": 1,
        "players": [{"id": 1, "control_dim": 1, "eps_dim": 1,
                     "feedback": {"form": "direct", "exprs": ["uo[1][0] + eps[1][0]*phi[0]"]}}],
        "dynamics": ["u[1][0]"], "horizon": {"t0": 0, "t1": 1, "step": 1},
        "scenario": {"uo": [["1"]]},
    })
    tr = Trajectory("single", 1.0, np.array([0.0]), np.array([[phi]]),
                    {1: np.array([[u]])}, {1: np.array([[uo]])})
    return recover_epsilon(g, tr)


def test_linear_inversion():
    pe = single_sample(1.2, 1.0, 2.0).players[1]
    assert pe.flags == [IDENTIFIED]
    assert pe.eps[0, 0] == pytest.approx(0.1, abs=1e-12)
    assert pe.residual[0] <= 1e-9


def test_degenerate_sample_unidentifiable():
    pe = single_sample(1.0, 1.0, 0.0).players[1]
    assert pe.flags == [UNIDENTIFIABLE]
    assert np.isnan(pe.eps[0, 0])


def test_lin1_round_trip(lin1):
    tr = simulate(lin1)
    trace = recover_epsilon(lin1, tr)
    for i, truth in ((1, 0.2), (2, 0.1)):
        pe = trace.players[i]
        ok = trace.identified(i)
        assert ok.sum() == len(tr) - 1
        assert np.max(np.abs(pe.eps[ok, 0] - truth)) <= 1e-6
        assert np.all(pe.residual[ok] <= 1e-9)
        small = np.abs(tr.phi[:, 0]) < 1e-8
        assert all(pe.flags[k] == UNIDENTIFIABLE for k in np.flatnonzero(small))


@settings(max_examples=25, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_round_trip_time_varying(e1, a):
    g = with_eps_truth(data_game("lin1"), [[repr(e1)], [f"{a!r}*sin(3*t)"]])
    g = dataclasses.replace(g, horizon=dataclasses.replace(g.horizon, t1=2.0))
    tr = simulate(g)
    trace = recover_epsilon(g, tr)
    ok1 = trace.identified(1)
    assert np.all(np.abs(trace.players[1].eps[ok1, 0] - e1) <= 1e-6)
    ok2 = trace.identified(2)
    assert np.all(np.abs(trace.players[2].eps[ok2, 0] - a * np.sin(3 * tr.t[ok2])) <= 1e-6)


def test_flag_stability_across_thresholds(lin1):
    tr = simulate(lin1)
    loose = recover_epsilon(lin1, tr, threshold=1e-8)
    tight = recover_epsilon(lin1, tr, threshold=1e-10)
    for i in (1, 2):
        a, b = loose.players[i], tight.players[i]
        for k in range(len(tr)):
            if a.flags[k] == UNIDENTIFIABLE and b.flags[k] == IDENTIFIED:
                pytest.fail("tighter threshold changed an unidentifiable value")
        both = loose.identified(i) & tight.identified(i)
        assert np.allclose(a.eps[both], b.eps[both], atol=1e-9)


def test_warm_start_off_gives_same_values(lin1):
    tr = simulate(lin1)
    a = recover_epsilon(lin1, tr, warm_start=True).players[1]
    b = recover_epsilon(lin1, tr, warm_start=False).players[1]
    assert a.flags == b.flags
    ok = ~np.isnan(a.eps[:, 0])
    assert np.allclose(a.eps[ok], b.eps[ok], atol=1e-9)


def test_nonlinear_in_eps():
    g = load_game({
        "name": "nl", "state_dim": 1,
        "players": [{"id": 1, "control_dim": 1, "eps_dim": 1,
                     "feedback": {"form": "direct",
                                  "exprs": ["uo[1][0] * exp(eps[1][0]*phi[0])"]}}],
        "dynamics": ["u[1][0] - phi[0]"], "horizon": {"t0": 0, "t1": 1, "step": 0.01},
        "scenario": {"uo": [["1 + 0.5*cos(t)"]]}, "eps_truth": [["0.3 + 0.2*t"]],
        "phi0": [0.5],
    })
    tr = simulate(g)
    trace = recover_epsilon(g, tr)
    ok = trace.identified(1)
    assert ok.all()
    assert np.max(np.abs(trace.players[1].eps[:, 0] - (0.3 + 0.2 * tr.t))) <= 1e-6


def test_overdetermined_least_squares():
    g = load_game({
        "name": "over", "state_dim": 1,
        "players": [{"id": 1, "control_dim": 2, "eps_dim": 1,
                     "feedback": {"form": "direct",
                                  "exprs": ["uo[1][0] + eps[1][0]*phi[0]",
                                            "uo[1][1] - eps[1][0]"]}}],
        "dynamics": ["u[1][0] + u[1][1]"], "horizon": {"t0": 0, "t1": 1, "step": 0.1},
        "scenario": {"uo": [["1", "0.5"]]}, "eps_truth": [["0.4"]], "phi0": [1.0],
    })
    trace = recover_epsilon(g, simulate(g))
    pe = trace.players[1]
    assert pe.flags == [IDENTIFIED] * len(pe.flags)
    assert np.allclose(pe.eps[:, 0], 0.4, atol=1e-9)


def test_csv_export_blank_when_unidentified(lin1):
    text = recover_epsilon(lin1, simulate(lin1)).to_csv()
    lines = text.splitlines()
    assert lines[0] == "t,player,eps_0,flag,residual"
    assert lines[1] == "0,1,,UNIDENTIFIABLE,0"
    t, player, eps, flag, _ = lines[3].split(",")
    assert (t, player, flag) == ("0.01", "1", "IDENTIFIED")
    assert float(eps) == pytest.approx(0.2, abs=1e-12)


def test_missing_columns(lin1):
    tr = simulate(lin1)
    tr.u.pop(2)
    with pytest.raises(ConfigError) as info:
        recover_epsilon(lin1, tr)
    assert info.value.code == "MISSING_COLUMNS"


@pytest.mark.parametrize("name, code", [("coalitions", "COALITION_GAME"),
                                        ("inverse", "NOT_DIRECT"),
                                        ("anticipation", "NOT_DIRECT")])
def test_rejected_games(name, code):
    g = data_game(name)
    with pytest.raises(ConfigError) as info:
        recover_epsilon(g, simulate(g))
    assert info.value.code == code
