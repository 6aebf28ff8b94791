import dataclasses

import numpy as np
import pytest

from igame.engine import simulate
from igame.errors import ConfigError, DepthCapError, InsufficientDataError
from igame.model import load_game
from igame.oracle import (DeviationSeries, FeedbackFit, LoopConfig, Prediction,
                          deviation_series, evaluate_prediction, fit_interactivity,
                          predict_baseline, predict_corrected, run_prediction_loop,
                          strategic_analysis, tactical_divergence)
from igame.rng import make_rng

import reference
from conftest import data_game


def ramp_game():
    return load_game({
        "name": "ramp", "state_dim": 1,
        "players": [
            {"id": 1, "control_dim": 1, "feedback": {"form": "direct", "exprs": ["uo[1][0]"]}},
            {"id": 2, "control_dim": 1, "feedback": {"form": "direct", "exprs": ["uo[2][0]"]}},
        ],
        "dynamics": ["u[1][0] + u[2][0]"], "horizon": {"t0": 0, "t1": 2, "step": 0.01},
        "scenario": {"uo": [["0"], ["t"]]}, "phi0": [0.0],
    })


def series(d, x):
    n = len(d)
    return DeviationSeries(np.arange(n), np.arange(n) * 0.01, {2: np.asarray(d).reshape(n, 1)},
                           np.asarray(x, dtype=float).reshape(n, 1))


# -- baseline --------------------------------------------------------------

def test_frozen_holds_last_observation(lin1):
    tr = simulate(lin1)
    p = predict_baseline(lin1, tr.upto(300), "frozen", 3.0, 0.5, 1.0)
    assert p.steps == 50
    assert np.all(p.controls[2] == tr.u[2][300])
    assert 1 not in p.controls


def test_linear_extrapolates_exact_line():
    g = ramp_game()
    tr = simulate(g)
    p = predict_baseline(g, tr.upto(100), "linear", 1.0, 0.5, 1.0, history=10)
    assert np.allclose(p.controls[2][:, 0], p.times, atol=1e-9)


def test_replay_reads_scenario(lin1):
    tr = simulate(lin1)
    p = predict_baseline(lin1, tr.upto(10), "replay", 0.1, 0.5, 1.0, observer=2)
    assert np.all(p.controls[1] == 1.0)
    p = predict_baseline(lin1, tr.upto(10), "replay", 0.1, 0.5, 1.0)
    assert np.all(p.controls[2] == -0.5)


def test_baseline_state_path_uses_zero_eps(lin1):
    tr = simulate(lin1)
    p = predict_baseline(lin1, tr.upto(0), "replay", 0.0, 0.5, 1.0)
    assert np.allclose(p.state_path[:, 0], 0.5 * p.times, atol=1e-12)


def test_baseline_errors(lin1):
    tr = simulate(lin1)
    with pytest.raises(ConfigError) as info:
        predict_baseline(lin1, tr, "oracle", 1.0, 0.5, 1.0)
    assert info.value.code == "UNKNOWN_PREDICTOR"
    with pytest.raises(InsufficientDataError) as info:
        predict_baseline(lin1, tr.upto(0), "linear", 0.0, 0.5, 1.0)
    assert info.value.code == "INSUFFICIENT_HISTORY"
    with pytest.raises(DepthCapError):
        predict_baseline(lin1, tr, "frozen", 1.0, 0.5, 0.4)
    with pytest.raises(ConfigError):
        predict_baseline(lin1, tr, "frozen", 1.005, 0.5, 1.0)


def test_prediction_constructor_enforces_cap():
    kw = dict(anchor=0.0, anchor_index=0, predictor="frozen", observer=1,
              times=np.array([0.1]), controls={}, state_path=np.zeros((1, 1)))
    Prediction(depth=0.5, cap=0.5, **kw)
    with pytest.raises(DepthCapError):
        Prediction(depth=0.6, cap=0.5, **kw)


# -- deviations ------------------------------------------------------------

def _log(g, tr, predictor, n, anchors):
    return {k: predict_baseline(g, tr.upto(k), predictor, float(tr.t[k]), n * tr.h, 1.0)
            for k in anchors}


def test_deviations_match_brute_force(lin1):
    tr = simulate(lin1)
    n = 50
    log = _log(lin1, tr, "frozen", n, range(0, 200))
    dev = deviation_series(log, tr)
    # frozen prediction anchored at k - n is u(k - n), so d(k) = u(k) - u(k - n)
    idx = np.arange(n, 200 + n)
    assert np.array_equal(dev.index, idx)
    brute = tr.u[2][idx, 0] - tr.u[2][idx - n, 0]
    assert np.allclose(dev.deviations[2][:, 0], brute, atol=0)
    assert np.allclose(brute, 0.1 * (tr.phi[idx, 0] - tr.phi[idx - n, 0]), atol=1e-12)
    assert np.max(np.abs(brute)) > 0.01
    assert np.array_equal(dev.features[:, 0], tr.phi[idx, 0])


def test_perfect_prediction_gives_zero_deviation():
    g = data_game("lin1_free")
    tr = simulate(g)
    dev = deviation_series(_log(g, tr, "frozen", 20, range(100)), tr)
    assert np.all(dev.deviations[2] == 0)


def test_gap_in_log(lin1):
    tr = simulate(lin1)
    log = _log(lin1, tr, "frozen", 10, range(30))
    del log[12]
    with pytest.raises(InsufficientDataError) as info:
        deviation_series(log, tr)
    assert info.value.code == "GAP_IN_LOG"


def test_pair_with_predicted_state(lin1):
    tr = simulate(lin1)
    log = _log(lin1, tr, "frozen", 10, range(30))
    dev = deviation_series(log, tr, pair_with="predicted")
    assert np.array_equal(dev.features[0], log[0].state_path[-1])


# -- fitting ---------------------------------------------------------------

def test_fit_exact_affine():
    x = np.linspace(-1, 2, 40)
    fit = fit_interactivity(series(0.3 * x, x), 40)
    assert abs(fit.a[2][0]) <= 1e-7
    assert abs(fit.B[2][0, 0] - 0.3) <= 1e-7
    assert fit.residual_rms[2] >= 0


def test_fit_matches_closed_form_ridge():
    x = np.linspace(0, 1, 30)
    d = 0.1 + 0.7 * x ** 2
    fit = fit_interactivity(series(d, x), 30, ridge=1e-3)
    a, b = reference.ridge_affine(list(x), list(d), 1e-3)
    assert fit.a[2][0] == pytest.approx(a, abs=1e-12)
    assert fit.B[2][0, 0] == pytest.approx(b, abs=1e-12)


def test_fit_degenerate_design_min_norm():
    c, dbar = 2.0, 0.5
    fit = fit_interactivity(series(np.full(50, dbar), np.full(50, c)), 50)
    # minimum-norm solution of a + c B = dbar
    assert fit.a[2][0] == pytest.approx(dbar / (1 + c * c), abs=1e-6)
    assert fit.B[2][0, 0] == pytest.approx(c * dbar / (1 + c * c), abs=1e-6)
    assert fit.residual_rms[2] <= 1e-6


def test_fit_with_seeded_noise():
    rng = make_rng(11)
    x = rng.random(100) * 4 - 2
    d = 0.3 * x + 1e-3 * (2 * rng.random(100) - 1)
    fit = fit_interactivity(series(d, x), 100)
    a, b = reference.ridge_affine(list(x), list(d), 1e-8)
    assert fit.B[2][0, 0] == pytest.approx(b, abs=1e-9)
    assert abs(fit.B[2][0, 0] - 0.3) <= 5e-3


def test_fit_uses_last_window():
    x = np.linspace(0, 1, 60)
    d = np.where(np.arange(60) < 30, 5.0, 0.3 * x)
    fit = fit_interactivity(series(d, x), 30)
    assert fit.B[2][0, 0] == pytest.approx(0.3, abs=1e-6)


def test_fit_insufficient_samples():
    with pytest.raises(InsufficientDataError) as info:
        fit_interactivity(series([1.0], [0.5]), 10)
    assert info.value.code == "INSUFFICIENT_SAMPLES"


# -- corrected prediction and metrics --------------------------------------

def test_zero_fit_reproduces_baseline(lin1):
    tr = simulate(lin1)
    base = predict_baseline(lin1, tr.upto(300), "frozen", 3.0, 0.5, 1.0)
    fit = FeedbackFit({2: np.zeros(1)}, {2: np.zeros((1, 1))}, 10, 1e-8, {2: 0.0}, 10)
    corr = predict_corrected(lin1, tr.upto(300), base, fit)
    assert np.array_equal(corr.state_path, base.state_path)
    assert np.array_equal(corr.controls[2], base.controls[2])


def test_corrected_beats_baseline_on_lin1(lin1):
    tr = simulate(lin1)
    k, n, w = 400, 50, 200
    log = _log(lin1, tr, "frozen", n, range(k - n - w + 1, k + 1))
    dev = deviation_series(log, tr.upto(k))
    assert len(dev) == w
    fit = fit_interactivity(dev, w)
    corr = predict_corrected(lin1, tr.upto(k), log[k], fit)
    mb, mc = evaluate_prediction(log[k], tr), evaluate_prediction(corr, tr)
    assert mc["state_rmse"] < mb["state_rmse"]


def test_metrics_zero_and_constant_offset(lin1):
    tr = simulate(lin1)
    idx = np.arange(101, 151)
    p = Prediction(1.0, 100, 0.5, 1.0, "test", 1, tr.t[idx], {2: tr.u[2][idx] + 0.25},
                   tr.phi[idx].copy())
    m = evaluate_prediction(p, tr)
    assert m["state_rmse"] == 0 and m["state_max"] == 0
    assert m["controls"]["2"]["rmse"] == pytest.approx(0.25)
    assert m["controls"]["2"]["max"] == pytest.approx(0.25)


def test_window_not_covered(lin1):
    tr = simulate(lin1)
    p = predict_baseline(lin1, tr.upto(990), "frozen", 9.9, 0.5, 1.0)
    with pytest.raises(InsufficientDataError) as info:
        evaluate_prediction(p, tr)
    assert info.value.code == "WINDOW_NOT_COVERED"


# -- tactical divergence ---------------------------------------------------

def test_tactical_divergence(lin1):
    tr = simulate(lin1)
    brute = max(max(abs(0.2 * p), abs(0.1 * p)) for p in tr.phi[:, 0])
    assert tactical_divergence(tr, lin1.scenario) == pytest.approx(brute, rel=1e-12)
    free = data_game("lin1_free")
    assert tactical_divergence(simulate(free), free.scenario) == 0.0
    assert tactical_divergence(tr.upto(-1), lin1.scenario) == 0.0


# -- loop ------------------------------------------------------------------

def test_loop_improves_and_is_deterministic(lin1):
    tr = simulate(lin1)
    cfg = LoopConfig(cap=1.0, depth=0.5, window=200)
    a = run_prediction_loop(lin1, tr, cfg)
    b = run_prediction_loop(lin1, tr, cfg)
    assert a.metrics_json() == b.metrics_json()
    assert a.log_jsonl() == b.log_jsonl()
    assert a.summary["improved_fraction"] >= 0.95
    assert a.summary["corrected"]["state_rmse"] < a.summary["baseline"]["state_rmse"]
    first = min(a.corrected)
    assert first == 50 + 200 - 1


def test_loop_fixed_point():
    g = data_game("lin1_free")
    tr = simulate(g)
    res = run_prediction_loop(g, tr, LoopConfig(cap=1.0, depth=0.5, window=50))
    for k, fit in res.fits.items():
        assert np.max(np.abs(fit.a[2])) <= 1e-7 and np.max(np.abs(fit.B[2])) <= 1e-7
        assert np.max(np.abs(res.corrected[k].state_path - res.baseline[k].state_path)) <= 1e-6


def test_loop_noise_seeded(lin1):
    tr = simulate(lin1)
    runs = [run_prediction_loop(lin1, tr, LoopConfig(cap=1.0, depth=0.5, window=100,
                                                     noise=1e-3, seed=s)).metrics_json()
            for s in (7, 7, 8)]
    assert runs[0] == runs[1] != runs[2]


def test_loop_options(lin1):
    tr = simulate(lin1)
    res = run_prediction_loop(lin1, tr, LoopConfig(cap=1.0, depth=0.2, window=30,
                                                   predictor="linear", correct_observer=True,
                                                   pair_with="predicted"))
    assert set(next(iter(res.fits.values())).a) == {1, 2}
    with pytest.raises(InsufficientDataError):
        run_prediction_loop(lin1, tr, LoopConfig(cap=1.0, depth=0.5, window=5000))
    with pytest.raises(DepthCapError):
        run_prediction_loop(lin1, tr, LoopConfig(cap=0.1, depth=0.5))
    with pytest.raises(ConfigError):
        run_prediction_loop(data_game("coalitions"), tr, LoopConfig(cap=1.0))


# -- strategic pipeline ----------------------------------------------------

def test_strategic_degenerate_pipeline():
    g = data_game("lin1_free")
    plain = simulate(g).phi
    p = strategic_analysis(g, LoopConfig(cap=1.0, depth=0.5, predictor="replay"))
    assert np.max(np.abs(p.long_term.phi - plain)) <= 1e-12
    for k, seg in p.segments.items():
        assert np.max(np.abs(seg.state_path - plain[k + 1:k + 1 + seg.steps])) <= 1e-12
    assert np.max(np.abs(p.combined - plain)) <= 1e-12


def test_strategic_segments_beat_long_term(lin1):
    p = strategic_analysis(lin1, LoopConfig(cap=1.0, depth=0.5))
    assert p.per_anchor
    assert all(a["segment_rmse"] < a["long_term_rmse"] for a in p.per_anchor)
    last = max(p.segments)
    assert np.array_equal(p.combined[last + 1:last + 51], p.segments[last].state_path)


def test_strategic_rejects(lin1):
    with pytest.raises(DepthCapError):
        strategic_analysis(lin1, LoopConfig(cap=0.25, depth=0.5))
    with pytest.raises(ConfigError):
        strategic_analysis(data_game("inverse"), LoopConfig(cap=1.0))


def test_strategic_accepts_observed_run(lin1):
    short = dataclasses.replace(lin1, horizon=dataclasses.replace(lin1.horizon, t1=4.0))
    p = strategic_analysis(short, LoopConfig(cap=1.0, depth=0.5, window=50),
                           observed=simulate(short))
    assert len(p.long_term) == 401
