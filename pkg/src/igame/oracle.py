"""Short-term prediction correction: treat the other players' prediction errors as feedback.

At each anchor ``t0`` the observer predicts the other players' pure controls
over ``(t0, t0 + depth]`` with a built-in predictor.  Realized controls are
then compared with the prediction issued ``depth`` earlier; the deviations
are fitted by an affine feedback ``d = a + B phi`` and the fit is used to
roll a corrected short-term prediction forward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernel
from .engine import rollout, simulate
from .errors import ConfigError, DepthCapError, InsufficientDataError
from .exprlang import BinOp, Num, Var
from .model import (GameDefinition, Scenario, build_associated_game, with_eps_truth,
                    zero_eps_truth)
from .rng import make_rng
from .trajectory import Trajectory

PREDICTORS = ("frozen", "linear", "replay")
DEFAULT_DEPTH_STEPS = 50


@dataclass(eq=False)
class Prediction:
    """Forecast issued at grid index ``anchor_index`` for ``(t0, t0 + depth]``."""

    anchor: float
    anchor_index: int
    depth: float
    cap: float
    predictor: str
    observer: int
    times: np.ndarray
    controls: dict                  # player -> (n, dim), times t0+h .. t0+depth
    state_path: np.ndarray          # (n, d)
    anchor_controls: dict = field(default_factory=dict)   # player -> (dim,) at t0

    def __post_init__(self):
        if not self.depth > 0:
            raise ConfigError(f"prediction depth must be positive, got {self.depth}", "DEPTH")
        if self.depth > self.cap * (1 + 1e-12):
            raise DepthCapError(f"depth {self.depth} exceeds the admissible cap {self.cap}")

    @property
    def steps(self) -> int:
        return len(self.times)

    def to_record(self) -> dict:
        return {
            "t0": float(self.anchor),
            "depth": float(self.depth),
            "predictor": self.predictor,
            "controls": {str(i): self.controls[i].tolist() for i in sorted(self.controls)},
            "state_path": self.state_path.tolist(),
        }


@dataclass
class DeviationSeries:
    index: np.ndarray               # grid indices of the samples
    t: np.ndarray
    deviations: dict                # player -> (M, dim)
    features: np.ndarray            # (M, d): phi(t) or the predicted phi
    pair_with: str = "phi"

    def __len__(self):
        return len(self.index)


@dataclass
class FeedbackFit:
    """Per player ``d ~ a + B phi``."""

    a: dict
    B: dict
    window: int
    ridge: float
    residual_rms: dict
    n_samples: int

    def correction(self, i: int, phi: np.ndarray) -> np.ndarray:
        return self.a[i] + self.B[i] @ phi


@dataclass
class LoopConfig:
    cap: float
    predictor: str = "frozen"
    depth: float | None = None      # default: 50 grid steps
    window: int = 200
    ridge: float = 1e-8
    history: int = 10               # points used by the linear predictor
    observer: int = 1
    pair_with: str = "phi"
    correct_observer: bool = False
    noise: float = 0.0
    seed: int = 0

    def resolved_depth(self, h: float) -> float:
        return DEFAULT_DEPTH_STEPS * h if self.depth is None else self.depth

    def check(self, g: GameDefinition):
        if self.predictor not in PREDICTORS:
            raise ConfigError(f"unknown predictor {self.predictor!r}; choose from {PREDICTORS}",
                              "UNKNOWN_PREDICTOR")
        if not self.cap > 0:
            raise ConfigError("depth cap must be positive", "DEPTH_CAP")
        depth = self.resolved_depth(g.horizon.step)
        if depth > self.cap * (1 + 1e-12):
            raise DepthCapError(f"depth {depth} exceeds the admissible cap {self.cap}")
        if not 1 <= self.observer <= g.n_players:
            raise ConfigError(f"observer {self.observer} is not a player", "UNKNOWN_PLAYER")
        if self.window < 1 or self.history < 2:
            raise ConfigError("window must be >= 1 and history >= 2", "RANGE")
        if self.ridge < 0 or self.noise < 0:
            raise ConfigError("ridge and noise must be non-negative", "RANGE")
        if self.pair_with not in ("phi", "predicted"):
            raise ConfigError("pair_with must be 'phi' or 'predicted'", "RANGE")


def _steps(depth: float, h: float) -> int:
    n = int(round(depth / h))
    if n < 1 or abs(n * h - depth) > 1e-9 * max(1.0, depth):
        raise ConfigError(f"depth {depth} is not a positive multiple of the step {h}", "DEPTH")
    return n


def _anchor_index(traj: Trajectory, g: GameDefinition, t0: float) -> int:
    h = g.horizon.step
    k = int(round((t0 - g.horizon.t0) / h))
    if k < 0 or k >= len(traj) or abs(traj.t[k] - t0) > 1e-9 * max(1.0, abs(t0)):
        raise ConfigError(f"anchor t0={t0} is not a grid point of the observed trajectory",
                          "OFF_GRID")
    return k


def _others(g: GameDefinition, observer: int) -> list[int]:
    return [p.id for p in g.players if p.id != observer]


def _left_difference(traj: Trajectory, k: int) -> np.ndarray:
    if k == 0:
        return np.zeros(traj.state_dim)
    return (traj.phi[k] - traj.phi[k - 1]) / traj.h


# -- baseline predictions --------------------------------------------------

def predict_baseline(g: GameDefinition, traj_so_far: Trajectory, predictor: str, t0: float,
                     depth: float, cap: float, observer: int = 1,
                     history: int = 10) -> Prediction:
    """Forecast the other players' pure controls and roll the state forward with eps = 0.

    ``frozen`` holds each player's last observed control, ``linear``
    extrapolates a least-squares line through the last ``history`` controls,
    ``replay`` reads the declared scenario.  The observer's own pure controls
    come from its scenario.
    """
    if predictor not in PREDICTORS:
        raise ConfigError(f"unknown predictor {predictor!r}; choose from {PREDICTORS}",
                          "UNKNOWN_PREDICTOR")
    if depth > cap * (1 + 1e-12):
        raise DepthCapError(f"depth {depth} exceeds the admissible cap {cap}")
    h = g.horizon.step
    n = _steps(depth, h)
    k = _anchor_index(traj_so_far, g, t0)
    grid = g.horizon.t0 + np.arange(k, k + n + 1) * h
    inputs = {}
    for i in _others(g, observer):
        if predictor == "replay":
            continue
        hist = traj_so_far.u[i][:k + 1]
        if predictor == "frozen":
            inputs[i] = np.repeat(hist[-1:], n + 1, axis=0)
        else:
            if len(hist) < 2:
                raise InsufficientDataError("linear predictor needs at least 2 observations",
                                            "INSUFFICIENT_HISTORY")
            w = min(history, len(hist))
            ts = traj_so_far.t[k + 1 - w:k + 1]
            tc = ts.mean()
            X = np.column_stack([np.ones(w), ts - tc])
            coef = np.linalg.lstsq(X, hist[-w:], rcond=None)[0]
            inputs[i] = np.column_stack([np.ones(n + 1), grid - tc]) @ coef
    phi, u, uo = rollout(g, traj_so_far.phi[k], k, n, dphi_start=_left_difference(traj_so_far, k),
                         input_uo=inputs, eps_mode="zero")
    others = _others(g, observer)
    return Prediction(
        anchor=float(t0), anchor_index=k, depth=float(depth), cap=float(cap),
        predictor=predictor, observer=observer, times=grid[1:],
        controls={i: uo[i][1:].copy() for i in others},
        state_path=phi[1:].copy(),
        anchor_controls={i: uo[i][0].copy() for i in others},
    )


# -- deviations and fitting ------------------------------------------------

def _deviation_at(g, traj, log, j, n, pair_with, observer, correct_observer):
    src = log[j - n]
    devs = {i: traj.u[i][j] - src.controls[i][-1] for i in src.controls}
    if correct_observer:
        devs[observer] = traj.u[observer][j] - traj.uo[observer][j]
    feat = traj.phi[j] if pair_with == "phi" else src.state_path[-1]
    return devs, feat


def deviation_series(prediction_log: Mapping[int, Prediction], traj: Trajectory,
                     pair_with: str = "phi", correct_observer: bool = False) -> DeviationSeries:
    """``d_i(t) = u_i(t) - u°_{[t - depth]; i}(t)`` for every t with a logged prediction."""
    if not prediction_log:
        raise InsufficientDataError("empty prediction log", "GAP_IN_LOG")
    anchors = sorted(prediction_log)
    missing = sorted(set(range(anchors[0], anchors[-1] + 1)) - set(anchors))
    if missing:
        raise InsufficientDataError(f"prediction log misses anchors {missing[:5]}", "GAP_IN_LOG")
    first = prediction_log[anchors[0]]
    n = first.steps
    observer = first.observer
    idx, feats = [], []
    devs: dict[int, list] = {}
    for a in anchors:
        j = a + n
        if j >= len(traj):
            break
        d, f = _deviation_at(None, traj, prediction_log, j, n, pair_with, observer,
                             correct_observer)
        idx.append(j)
        feats.append(f)
        for i, v in d.items():
            devs.setdefault(i, []).append(v)
    idx = np.array(idx, dtype=int)
    return DeviationSeries(idx, traj.t[idx] if len(idx) else np.zeros(0),
                           {i: np.array(v) for i, v in devs.items()},
                           np.array(feats).reshape(len(idx), traj.state_dim), pair_with)


def fit_interactivity(dev: DeviationSeries, window: int, ridge: float = 1e-8) -> FeedbackFit:
    """Ridge least squares of the last ``window`` deviations on ``(1, phi)``.

    Minimizes ``sum |d - a - B phi|^2 + ridge (|a|^2 + |B|^2)`` through the
    normal equations.
    """
    d = dev.features.shape[1]
    m = min(window, len(dev))
    if m < d + 1:
        raise InsufficientDataError(f"fit needs at least {d + 1} samples, have {m}",
                                    "INSUFFICIENT_SAMPLES")
    X = np.column_stack([np.ones(m), dev.features[-m:]])
    A = X.T @ X + ridge * np.eye(d + 1)
    a, B, rms = {}, {}, {}
    for i, D in dev.deviations.items():
        Y = D[-m:]
        theta = np.linalg.solve(A, X.T @ Y)          # (d+1, dim)
        a[i] = theta[0].copy()
        B[i] = theta[1:].T.copy()
        rms[i] = float(np.sqrt(np.mean((Y - X @ theta) ** 2))) if Y.size else 0.0
    return FeedbackFit(a, B, window, ridge, rms, m)


def _corrected_law(i: int, dim: int, fit: FeedbackFit, d: int):
    exprs = []
    for j in range(dim):
        corr = Num(float(fit.a[i][j]))
        for l in range(d):
            corr = BinOp("+", corr, BinOp("*", Num(float(fit.B[i][j, l])), Var(f"phi[{l}]")))
        exprs.append(BinOp("+", Var(f"uo[{i}][{j}]"), corr))
    return exprs


def predict_corrected(g: GameDefinition, traj_so_far: Trajectory, baseline: Prediction,
                      fit: FeedbackFit) -> Prediction:
    """Roll forward with ``u_i = u°_i + a_i + B_i phi`` for every fitted player."""
    extra = set(fit.a) - set(baseline.controls) - {baseline.observer}
    if extra:
        raise ConfigError(f"fit covers players {sorted(extra)} absent from the baseline",
                          "PLAYER_MISMATCH")
    k, n = baseline.anchor_index, baseline.steps
    inputs = {i: np.vstack([baseline.anchor_controls[i][None, :], baseline.controls[i]])
              for i in baseline.controls}
    overrides = {i: _corrected_law(i, g.player(i).control_dim, fit, g.state_dim)
                 for i in fit.a}
    phi, u, _ = rollout(g, traj_so_far.phi[k], k, n, dphi_start=_left_difference(traj_so_far, k),
                        input_uo=inputs, law_override=overrides, eps_mode="zero")
    return Prediction(
        anchor=baseline.anchor, anchor_index=k, depth=baseline.depth, cap=baseline.cap,
        predictor=f"{baseline.predictor}+corrected", observer=baseline.observer,
        times=baseline.times, controls={i: u[i][1:].copy() for i in baseline.controls},
        state_path=phi[1:].copy(), anchor_controls={i: u[i][0].copy() for i in baseline.controls},
    )


# -- evaluation ------------------------------------------------------------

def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(err ** 2))) if err.size else 0.0


def evaluate_prediction(p: Prediction, traj: Trajectory) -> dict:
    idx = np.arange(p.anchor_index + 1, p.anchor_index + p.steps + 1)
    if idx[-1] >= len(traj):
        raise InsufficientDataError(f"trajectory ends before t0+depth={p.times[-1]}",
                                    "WINDOW_NOT_COVERED")
    err = p.state_path - traj.phi[idx]
    out = {"state_rmse": _rmse(err), "state_max": float(np.max(np.abs(err))), "controls": {}}
    for i, c in p.controls.items():
        e = c - traj.u[i][idx]
        out["controls"][str(i)] = {"rmse": _rmse(e), "max": float(np.max(np.abs(e)))}
    return out


def _scenario_values(scenario: Scenario, t: np.ndarray) -> list[np.ndarray]:
    exprs = [e for row in scenario.uo for e in row]
    if not exprs or not len(t):
        return [np.zeros((len(t), len(row))) for row in scenario.uo]
    block = kernel.Block(exprs, [-1] * len(exprs), {"t": 0})
    rows = np.asarray(t, dtype=float).reshape(-1, 1)
    cols = [block.eval_rows(rows, k) for k in range(len(exprs))]
    out, c = [], 0
    for row in scenario.uo:
        out.append(np.column_stack(cols[c:c + len(row)]) if row else np.zeros((len(t), 0)))
        c += len(row)
    return out


def tactical_divergence(traj: Trajectory, scenario: Scenario) -> float:
    """``max_t max_i |u_i(t) - u°_i(t)|_inf``; zero when the run is exactly its scenario."""
    if len(traj) == 0:
        return 0.0
    best = 0.0
    for i, vals in enumerate(_scenario_values(scenario, traj.t), start=1):
        if i not in traj.u or vals.size == 0:
            continue
        best = max(best, float(np.max(np.abs(traj.u[i] - vals))))
    return best


# -- the anchor loop -------------------------------------------------------

@dataclass
class LoopResult:
    config: LoopConfig
    depth: float
    baseline: dict                  # anchor index -> Prediction
    corrected: dict                 # anchor index -> Prediction (after warm-up)
    fits: dict
    per_anchor: list
    summary: dict

    def log_jsonl(self) -> str:
        lines = []
        for k in sorted(self.baseline):
            rec = self.baseline[k].to_record()
            lines.append(json.dumps(rec))
            if k in self.corrected:
                lines.append(json.dumps(self.corrected[k].to_record()))
        return "\n".join(lines) + "\n"

    def metrics_json(self) -> str:
        return json.dumps({"baseline": self.summary["baseline"],
                           "corrected": self.summary["corrected"],
                           "improved_fraction": self.summary["improved_fraction"],
                           "anchors": self.summary["anchors"],
                           "per_anchor": self.per_anchor}, indent=1) + "\n"


def observe(traj: Trajectory, noise: float, seed: int) -> Trajectory:
    """Copy of ``traj`` with uniform noise in ``[-noise, noise]`` on realized controls."""
    if noise == 0:
        return traj
    rng = make_rng(seed)
    u = {i: a + noise * (2.0 * rng.random(a.shape) - 1.0) for i, a in sorted(traj.u.items())}
    return Trajectory(traj.game, traj.h, traj.t, traj.phi, u, traj.uo, traj.eps, traj.v,
                      dict(traj.meta, observation_noise=noise, seed=seed))


def _pooled(errors: list[dict], key: str) -> dict:
    sq = np.array([e[key]["state_rmse"] ** 2 for e in errors])
    mx = max((e[key]["state_max"] for e in errors), default=0.0)
    return {"state_rmse": float(np.sqrt(sq.mean())) if len(sq) else 0.0, "state_max": mx,
            "mean_anchor_state_rmse": float(np.sqrt(sq).mean()) if len(sq) else 0.0}


def run_prediction_loop(g: GameDefinition, traj: Trajectory, config: LoopConfig) -> LoopResult:
    """Baseline, deviation, fit and corrected prediction at every grid anchor."""
    config.check(g)
    if g.coalitions:
        raise ConfigError("prediction correction needs per-player controls; "
                          "coalition games are not supported", "COALITION_GAME")
    h = g.horizon.step
    depth = config.resolved_depth(h)
    n = _steps(depth, h)
    observed = observe(traj, config.noise, config.seed)
    k_min = 1 if config.predictor == "linear" else 0
    k_max = len(traj) - 1 - n
    if k_max < k_min:
        raise InsufficientDataError("trajectory shorter than one prediction window",
                                    "INSUFFICIENT_HISTORY")
    baseline, corrected, fits = {}, {}, {}
    dev_idx, dev_feat, dev_vals = [], [], {}
    per_anchor = []
    for k in range(k_min, k_max + 1):
        past = observed.upto(k)
        t0 = float(traj.t[k])
        base = predict_baseline(g, past, config.predictor, t0, depth, config.cap,
                                config.observer, config.history)
        baseline[k] = base
        if k - n in baseline:
            d, f = _deviation_at(g, past, baseline, k, n, config.pair_with, config.observer,
                                 config.correct_observer)
            dev_idx.append(k)
            dev_feat.append(f)
            for i, v in d.items():
                dev_vals.setdefault(i, []).append(v)
        if len(dev_idx) < config.window:
            continue
        w = config.window
        dev = DeviationSeries(np.array(dev_idx[-w:]), traj.t[dev_idx[-w:]],
                              {i: np.array(v[-w:]) for i, v in dev_vals.items()},
                              np.array(dev_feat[-w:]), config.pair_with)
        fit = fit_interactivity(dev, w, config.ridge)
        corr = predict_corrected(g, past, base, fit)
        fits[k] = fit
        corrected[k] = corr
        mb = evaluate_prediction(base, traj)
        mc = evaluate_prediction(corr, traj)
        per_anchor.append({"t0": t0, "baseline": mb, "corrected": mc})
    if not per_anchor:
        raise InsufficientDataError(
            f"no anchor accumulated {config.window} deviation samples; shorten --window or "
            "lengthen the horizon", "INSUFFICIENT_HISTORY")
    better = sum(r["corrected"]["state_rmse"] < r["baseline"]["state_rmse"] for r in per_anchor)
    summary = {
        "baseline": _pooled(per_anchor, "baseline"),
        "corrected": _pooled(per_anchor, "corrected"),
        "improved_fraction": better / len(per_anchor),
        "anchors": len(per_anchor),
    }
    return LoopResult(config, depth, baseline, corrected, fits, per_anchor, summary)


# -- strategic pipeline ----------------------------------------------------

@dataclass
class Prognosis:
    long_term: Trajectory
    segments: dict                  # anchor index -> corrected Prediction
    combined: np.ndarray            # state path with segment overrides
    per_anchor: list
    rule: str
    loop: LoopResult

    def to_json(self) -> str:
        doc = {
            "rule": self.rule,
            "long_term": {"t": self.long_term.t.tolist(), "phi": self.long_term.phi.tolist()},
            "combined_phi": self.combined.tolist(),
            "segments": [dict(self.segments[k].to_record(), anchor_index=k)
                         for k in sorted(self.segments)],
            "per_anchor": self.per_anchor,
            "summary": self.loop.summary,
        }
        return json.dumps(doc, indent=1) + "\n"


def strategic_analysis(g: GameDefinition, config: LoopConfig,
                       observed: Trajectory | None = None) -> Prognosis:
    """Long-term rollout of the associated game plus corrected short-term segments.

    The virtual players of the associated game hold their epsilons at zero and
    the real players follow the scenario.  Short-term segments come from the
    prediction loop run on the observed interactive play (simulated from
    ``eps_truth`` when ``observed`` is omitted).  Inside each anchor's window
    the corrected segment overrides the long-term path; later anchors win.
    """
    for p in g.players:
        if p.feedback is None or p.feedback.form != "direct" or p.feedback.order != 0:
            raise ConfigError(f"player {p.id}: strategic analysis needs direct order-0 laws",
                              "NOT_DIRECT")
    config.check(g)
    assoc = build_associated_game(g)
    long_term = simulate(assoc)
    if observed is None:
        src = g if g.eps_truth is not None else with_eps_truth(g, zero_eps_truth(g))
        observed = simulate(src)
    loop = run_prediction_loop(g, observed, config)
    combined = long_term.phi.copy()
    per_anchor = []
    for k in sorted(loop.corrected):
        seg = loop.corrected[k]
        idx = np.arange(k + 1, k + seg.steps + 1)
        combined[idx] = seg.state_path
        real = observed.phi[idx]
        per_anchor.append({
            "t0": seg.anchor,
            "segment_rmse": _rmse(seg.state_path - real),
            "long_term_rmse": _rmse(long_term.phi[idx] - real),
            "disagreement": _rmse(seg.state_path - long_term.phi[idx]),
        })
    rule = ("within each anchor window (t0, t0+depth] the corrected short-term segment "
            "overrides the long-term associated-game path; later anchors take precedence")
    return Prognosis(long_term, dict(loop.corrected), combined, per_anchor, rule, loop)
