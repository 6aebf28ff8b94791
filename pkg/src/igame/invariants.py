"""Scan candidate quantities Z along a run for time independence or closed Z-dynamics.

Both tests work on the recorded grid: variation is measured over the samples
and the derivative is the forward difference ``(Z[k+1] - Z[k]) / h``, which
is exactly what the Euler recurrence produces.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from . import kernel
from .engine import simulate
from .errors import ConfigError, IGameError
from .exprlang import BinOp, Expr, Num, free_variables, parse, to_text
from .model import GameDefinition, Scenario, with_eps_truth, zero_eps_truth
from .rng import make_rng
from .trajectory import Trajectory

INVARIANT = "INVARIANT"
CLOSED_DYNAMICS = "CLOSED_DYNAMICS"
NEITHER = "NEITHER"
ERROR = "ERROR"

TOL_REL = 1e-6
TOL_DYN = 1e-6


@dataclass(frozen=True)
class QuantityCandidate:
    name: str
    expr: Expr

    @classmethod
    def of(cls, name: str, text: str) -> "QuantityCandidate":
        return cls(name, parse(text))


@dataclass
class OmenResult:
    name: str
    expr: str
    verdict: str
    variation: float = float("nan")
    c0: float = float("nan")
    c1: float = float("nan")
    residual: float = float("nan")
    span: tuple = (float("nan"), float("nan"))
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"name": self.name, "expr": self.expr, "verdict": self.verdict,
             "variation": self.variation, "c0": self.c0, "c1": self.c1,
             "residual": self.residual, "span": list(self.span)}
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class OmenReport:
    results: list = field(default_factory=list)

    def __len__(self):
        return len(self.results)

    def verdicts(self) -> dict:
        return {r.name: r.verdict for r in self.results}

    def to_json(self) -> str:
        return json.dumps({"candidates": [r.to_dict() for r in self.results]}, indent=1) + "\n"


def load_candidates(doc) -> list[QuantityCandidate]:
    """Candidates from a JSON list of ``{name, expr}`` objects (text or parsed)."""
    if isinstance(doc, (str, bytes)):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"candidates are not valid JSON: {exc}") from None
    if not isinstance(doc, list):
        raise ConfigError("candidates must be a JSON list of {name, expr}", "SCHEMA")
    out = []
    for k, item in enumerate(doc):
        if not isinstance(item, dict) or not isinstance(item.get("expr"), str):
            raise ConfigError(f"candidate {k}: expected an object with an 'expr' string",
                              "SCHEMA")
        out.append(QuantityCandidate.of(str(item.get("name", item["expr"])), item["expr"]))
    return out


def evaluate_quantity(q: QuantityCandidate, traj: Trajectory) -> np.ndarray:
    """``Z(t_k)`` for every sample; unknown columns raise UnboundVariableError."""
    cols = traj.variables()
    names = sorted(free_variables(q.expr))
    missing = [n for n in names if n not in cols]
    if missing:
        from .errors import UnboundVariableError
        raise UnboundVariableError(missing)
    if not len(traj):
        return np.zeros(0)
    slot_of = {n: k for k, n in enumerate(names)}
    rows = np.column_stack([cols[n] for n in names]) if names else np.zeros((len(traj), 0))
    block = kernel.Block([q.expr], [-1], slot_of)
    return block.eval_rows(rows, 0)


def test_invariance(series: Sequence[float], tol_rel: float = TOL_REL) -> tuple[bool, float]:
    """``(max - min) / max(1, |mean|)`` against ``tol_rel``."""
    z = np.asarray(series, dtype=float)
    if z.size == 0:
        raise ValueError("empty series")
    if not tol_rel > 0:
        raise ValueError("tol_rel must be positive")
    variation = float((z.max() - z.min()) / max(1.0, abs(z.mean())))
    return variation <= tol_rel, variation


test_invariance.__test__ = False     # keep pytest from collecting the name


def fit_z_dynamics(series: Sequence[float], h: float) -> tuple[float, float, float]:
    """Least squares of ``(Z[k+1] - Z[k]) / h`` on ``(1, Z[k])``; minimum norm if degenerate."""
    z = np.asarray(series, dtype=float)
    if z.size < 3:
        raise ValueError("closed-dynamics fit needs at least 3 samples")
    dz = (z[1:] - z[:-1]) / h
    X = np.column_stack([np.ones(z.size - 1), z[:-1]])
    coef = np.linalg.lstsq(X, dz, rcond=None)[0]
    resid = float(np.sqrt(np.mean((dz - X @ coef) ** 2)))
    return float(coef[0]), float(coef[1]), resid


def dynamics_tolerance(series: Sequence[float], tol: float = TOL_DYN) -> float:
    z = np.asarray(series, dtype=float)
    return tol * (1.0 + float(np.max(np.abs(z)))) if z.size else tol


def _scan_one(q: QuantityCandidate, traj: Trajectory, tol_rel: float, tol_dyn: float):
    res = OmenResult(q.name, to_text(q.expr), NEITHER)
    try:
        z = evaluate_quantity(q, traj)
        if z.size == 0:
            raise ValueError("empty trajectory")
        if not np.all(np.isfinite(z)):
            raise ValueError("non-finite values in the series")
        res.span = (float(traj.t[0]), float(traj.t[-1]))
        invariant, res.variation = test_invariance(z, tol_rel)
        if z.size >= 3:
            res.c0, res.c1, res.residual = fit_z_dynamics(z, traj.h)
        if invariant:
            res.verdict = INVARIANT
        elif z.size >= 3 and res.residual <= dynamics_tolerance(z, tol_dyn):
            res.verdict = CLOSED_DYNAMICS
    except (IGameError, ValueError) as exc:
        res.verdict = ERROR
        res.error = str(exc)
    return res


def scan_omens(candidates: Iterable[QuantityCandidate], traj: Trajectory,
               tol_rel: float = TOL_REL, tol_dyn: float = TOL_DYN) -> OmenReport:
    """INVARIANT beats CLOSED_DYNAMICS beats NEITHER; failures are reported per candidate."""
    return OmenReport([_scan_one(q, traj, tol_rel, tol_dyn) for q in candidates])


# -- stability under scenario perturbation ---------------------------------

@dataclass
class StabilityReport:
    base: OmenReport
    runs: int
    delta: float
    seed: int
    flip_rate: dict                 # candidate name -> fraction of runs with a changed verdict
    topology: str = "sup-norm on scenario control values (constant offsets)"

    def to_json(self) -> str:
        return json.dumps({"base": json.loads(self.base.to_json()), "runs": self.runs,
                           "delta": self.delta, "seed": self.seed, "topology": self.topology,
                           "flip_rate": self.flip_rate}, indent=1) + "\n"


def perturb_scenario(scenario: Scenario, offsets: np.ndarray) -> Scenario:
    rows, c = [], 0
    for row in scenario.uo:
        rows.append(tuple(BinOp("+", e, Num(float(offsets[c + j]))) for j, e in enumerate(row)))
        c += len(row)
    return Scenario(tuple(rows))


def verdict_stability(g: GameDefinition, candidates: Sequence[QuantityCandidate],
                      runs: int = 16, delta: float = 1e-3, seed: int = 0,
                      tol_rel: float = TOL_REL, tol_dyn: float = TOL_DYN) -> StabilityReport:
    """Re-scan under ``runs`` scenario perturbations with sup-norm at most ``delta``.

    Each run shifts every scenario component by a constant drawn uniformly from
    ``[-delta, delta]`` with the seeded generator; the flip rate is the
    fraction of runs whose verdict differs from the unperturbed one.
    """
    if runs < 1 or not delta >= 0:
        raise ConfigError("runs must be >= 1 and delta >= 0", "RANGE")
    if g.eps_truth is None:
        g = with_eps_truth(g, zero_eps_truth(g))
    base = scan_omens(candidates, simulate(g), tol_rel, tol_dyn)
    width = sum(len(r) for r in g.scenario.uo)
    rng = make_rng(seed)
    flips = {r.name: 0 for r in base.results}
    for _ in range(runs):
        offsets = delta * (2.0 * rng.random(width) - 1.0)
        gp = replace(g, scenario=perturb_scenario(g.scenario, offsets))
        rep = scan_omens(candidates, simulate(gp), tol_rel, tol_dyn)
        for b, r in zip(base.results, rep.results):
            flips[b.name] += b.verdict != r.verdict
    return StabilityReport(base, runs, delta, seed, {k: v / runs for k, v in flips.items()})
