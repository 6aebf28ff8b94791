import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from igame.engine import simulate
from igame.errors import ConfigError, UnboundVariableError
from igame.invariants import (CLOSED_DYNAMICS, ERROR, INVARIANT, NEITHER, QuantityCandidate,
                              evaluate_quantity, fit_z_dynamics, load_candidates, scan_omens,
                              test_invariance as invariance, verdict_stability)
from igame.trajectory import Trajectory

import reference
from conftest import data_game

Q = QuantityCandidate.of


def test_evaluate_examples():
    still = simulate(data_game("still"))
    assert np.all(evaluate_quantity(Q("z", "phi[0]"), still) == 3.0)
    assert np.array_equal(evaluate_quantity(Q("t", "t"), still), still.t)
    harm = simulate(data_game("harmonic"))
    z = evaluate_quantity(Q("E", "phi[0]^2 + phi[1]^2"), harm)
    assert np.allclose(z, reference.harmonic_energy(0.001, 1.0), rtol=1e-12)
    assert np.allclose(z[1:] / z[:-1], 1 + 0.001 ** 2, rtol=1e-12)


def test_evaluate_uses_controls_and_eps(lin1):
    tr = simulate(lin1)
    z = evaluate_quantity(Q("gap", "u[1][0] - uo[1][0] - eps[1][0]*phi[0]"), tr)
    assert np.max(np.abs(z)) <= 1e-12


def test_evaluate_unbound(lin1):
    with pytest.raises(UnboundVariableError):
        evaluate_quantity(Q("x", "u[3][0]"), simulate(lin1))


def test_invariance_examples():
    assert invariance([2.0] * 5) == (True, 0.0)
    t = np.linspace(0, 1, 101)
    ok, var = invariance(0.5 * t)
    assert not ok and var == pytest.approx(0.5)
    ok, var = invariance(reference.harmonic_energy(0.001, 1.0), 5e-3)
    assert ok and var < (1 + 0.001 ** 2) ** 1000 - 1 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(1, 1.001), min_size=2, max_size=50), st.floats(1, 100))
def test_invariance_scaling_preserves_verdict(values, c):
    z = np.array(values)
    assert invariance(z, 1e-4)[0] == invariance(c * z, 1e-4)[0]


def test_fit_lin1_recurrence(lin1):
    z = evaluate_quantity(Q("z", "phi[0]"), simulate(lin1))
    c0, c1, res = fit_z_dynamics(z, 0.01)
    assert abs(c0 - 0.5) <= 1e-7 and abs(c1 - 0.3) <= 1e-7
    assert res <= 1e-9
    # the same recurrence rebuilt independently
    ref = reference.lin1_euler(0.01, 10.0)
    assert np.allclose(z, ref, rtol=1e-12)


def test_fit_constant_series():
    c0, c1, res = fit_z_dynamics([4.0] * 10, 0.1)
    assert (c0, c1, res) == (0.0, 0.0, 0.0)


def test_fit_cubic_is_neither():
    t = np.linspace(0, 1, 101)
    z = t ** 3
    _, _, res = fit_z_dynamics(z, 0.01)
    assert res > 1e-6 * (1 + np.max(np.abs(z)))
    q = Trajectory("cubic", 0.01, t, z.reshape(-1, 1))
    assert scan_omens([Q("c", "phi[0]")], q).results[0].verdict == NEITHER


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**63))
def test_fit_recovers_seeded_constants(seed):
    from igame.rng import make_rng
    rng = make_rng(seed)
    c0, c1 = 4 * rng.random(2) - 2
    h, z = 0.01, [1.0 + rng.random()]
    for _ in range(200):
        z.append(z[-1] + h * (c0 + c1 * z[-1]))
    z = np.array(z)
    if np.ptp(z) < 1e-6:
        return
    f0, f1, _ = fit_z_dynamics(z, h)
    assert abs(f0 - c0) <= 1e-7 and abs(f1 - c1) <= 1e-7


def test_scan_examples(lin1):
    still = simulate(data_game("still"))
    assert scan_omens([Q("z", "phi[0]")], still).verdicts() == {"z": INVARIANT}
    rep = scan_omens([Q("z", "phi[0]"), Q("z2", "phi[0]^2")], simulate(lin1))
    assert rep.verdicts() == {"z": CLOSED_DYNAMICS, "z2": NEITHER}
    r = rep.results[0]
    assert abs(r.c0 - 0.5) <= 1e-7 and abs(r.c1 - 0.3) <= 1e-7
    assert r.span == (0.0, 10.0)
    assert len(scan_omens([], still)) == 0


def test_scan_harmonic_energy():
    rep = scan_omens([Q("E", "phi[0]^2 + phi[1]^2")], simulate(data_game("harmonic")),
                     tol_rel=5e-3)
    assert rep.verdicts() == {"E": INVARIANT}


def test_scan_errors_are_per_candidate(lin1):
    rep = scan_omens([Q("bad", "log(phi[0] - 100)"), Q("z", "phi[0]"), Q("u", "u[7][0]")],
                     simulate(lin1))
    assert [r.verdict for r in rep.results] == [ERROR, CLOSED_DYNAMICS, ERROR]
    assert rep.results[0].error


def test_scan_order_independent(lin1):
    tr = simulate(lin1)
    cands = [Q("a", "phi[0]"), Q("b", "phi[0]^2"), Q("c", "t"), Q("d", "uo[1][0]")]
    fwd = scan_omens(cands, tr).verdicts()
    rev = scan_omens(cands[::-1], tr).verdicts()
    assert fwd == rev
    assert fwd["d"] == INVARIANT and fwd["c"] == CLOSED_DYNAMICS


def test_load_candidates():
    cands = load_candidates('[{"name": "E", "expr": "phi[0]^2"}, {"expr": "t"}]')
    assert [c.name for c in cands] == ["E", "t"]
    with pytest.raises(ConfigError):
        load_candidates('{"name": "x"}')
    with pytest.raises(ConfigError):
        load_candidates('[{"name": "x", "expr": "phi["}]')


def test_stability_harness(lin1):
    cands = [Q("z", "phi[0]"), Q("z2", "phi[0]^2")]
    a = verdict_stability(lin1, cands, runs=4, delta=1e-3, seed=5)
    b = verdict_stability(lin1, cands, runs=4, delta=1e-3, seed=5)
    assert a.to_json() == b.to_json()
    assert a.flip_rate == {"z": 0.0, "z2": 0.0}
    assert "sup-norm" in a.topology
