"""Control resolution and explicit-Euler integration in discrete time.

Feedbacks see the state at the left end of a step (and, for order-1 laws,
the left difference ``(phi_k - phi_{k-1}) / h``); the state is advanced with
the right difference ``phi_{k+1} = phi_k + h * Phi(phi_k, u_k)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import kernel
from .errors import (ConfigError, EvalDomainError, IGameError, NumericError, SimulationError,
                     SolverError, SubstitutionError)
from .exprlang import (BinOp, Expr, Neg, Num, Var, affine_split, constant_value, simplify,
                       substitute)
from .model import FeedbackLaw, GameDefinition, PlayerSpec, law_order, validate
from .trajectory import Trajectory

FD_DELTA = 1e-7
NEWTON_TOL = 1e-9
NEWTON_MAX_ITER = 100
MAX_HALVINGS = 20
COND_LIMIT = 1e12


@dataclass(frozen=True)
class StateVector:
    values: tuple
    t: float


@dataclass
class ControlResolution:
    u: dict = field(default_factory=dict)
    uo: dict = field(default_factory=dict)
    eps: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    iterations: dict = field(default_factory=dict)


# -- slot layout -----------------------------------------------------------

class SlotMap:
    """Flat layout of every variable a game's expressions can reference."""

    def __init__(self, g: GameDefinition):
        names = ["t", "h"]
        d = g.state_dim
        names += [f"phi[{j}]" for j in range(d)]
        names += [f"dphi[{j}]" for j in range(d)]
        names += [f"_next[{j}]" for j in range(d)]
        for p in g.players:
            names += [f"u[{p.id}][{j}]" for j in range(p.control_dim)]
            names += [f"uo[{p.id}][{j}]" for j in range(p.control_dim)]
            names += [f"eps[{p.id}][{j}]" for j in range(p.eps_dim)]
        for c in g.coalitions:
            names += [f"v[{c.id}][{j}]" for j in range(c.control_dim)]
        self.names = names
        self.index = {n: k for k, n in enumerate(names)}
        self.d = d
        self.phi = [self.index[f"phi[{j}]"] for j in range(d)]
        self.dphi = [self.index[f"dphi[{j}]"] for j in range(d)]
        self.next = [self.index[f"_next[{j}]"] for j in range(d)]

    def __len__(self):
        return len(self.names)

    def of(self, head: str, i: int, dim: int) -> list[int]:
        return [self.index[f"{head}[{i}][{j}]"] for j in range(dim)]


def _next_exprs(g: GameDefinition) -> list[Expr]:
    return [BinOp("+", Var(f"phi[{j}]"), BinOp("*", Var("h"), e))
            for j, e in enumerate(g.dynamics)]


def _is_newton(p: PlayerSpec) -> bool:
    return p.feedback is not None and p.feedback.form != "direct"


def _residual_exprs(p: PlayerSpec) -> list[Expr]:
    law = p.feedback
    if law.form == "inverse":
        return [BinOp("-", e, Var(f"uo[{p.id}][{j}]")) for j, e in enumerate(law.exprs)]
    return list(law.exprs)


class CompiledGame:
    """Blocks and slot layout for one game, built once and cached on the game."""

    def __init__(self, g: GameDefinition):
        self.g = g
        self.slots = sm = SlotMap(g)
        idx = sm.index
        self.order = [] if g.coalitions else law_order(g)
        self.all_direct = g.is_coalition or not any(_is_newton(p) for p in g.players)
        if g.eps_truth is None and any(p.eps_dim for p in g.players):
            self.eps_known = False
        else:
            self.eps_known = True

        pre_e, pre_t = [], []
        for p, row in zip(g.players, g.scenario.uo):
            for j, e in enumerate(row):
                pre_e.append(e)
                pre_t.append(idx[f"uo[{p.id}][{j}]"])
        if self.eps_known and g.eps_truth is not None:
            for p, row in zip(g.players, g.eps_truth):
                for j, e in enumerate(row):
                    pre_e.append(e)
                    pre_t.append(idx[f"eps[{p.id}][{j}]"])
        self.pre = (pre_e, pre_t)

        self.law_parts = {}
        if not g.coalitions:
            for i in self.order:
                p = g.player(i)
                if _is_newton(p):
                    self.law_parts[i] = ([], [])
                else:
                    self.law_parts[i] = (list(p.feedback.exprs), sm.of("u", i, p.control_dim))

        post_e, post_t = [], []
        for c in g.coalitions:
            for j, e in enumerate(c.exprs):
                post_e.append(e)
                post_t.append(idx[f"v[{c.id}][{j}]"])
        post_e += _next_exprs(g)
        post_t += sm.next
        self.post = (post_e, post_t)

        self.rec = list(sm.phi)
        self.rec_cols = [("phi", 0, sm.d)]
        if not g.coalitions:
            for p in g.players:
                self.rec += sm.of("u", p.id, p.control_dim)
        for p in g.players:
            self.rec += sm.of("uo", p.id, p.control_dim)
        if self.eps_known:
            for p in g.players:
                self.rec += sm.of("eps", p.id, p.eps_dim)
        for c in g.coalitions:
            self.rec += sm.of("v", c.id, c.control_dim)
        self._blocks = {}

    def block(self, name: str) -> kernel.Block:
        key = (name, kernel.backend_name())
        b = self._blocks.get(key)
        if b is None:
            idx = self.slots.index
            if name == "pre":
                b = kernel.Block(*self.pre, idx)
            elif name == "post":
                b = kernel.Block(*self.post, idx)
            elif name == "full":
                e, t = list(self.pre[0]), list(self.pre[1])
                for i in self.order:
                    e += self.law_parts[i][0]
                    t += self.law_parts[i][1]
                b = kernel.Block(e + self.post[0], t + self.post[1], idx)
            elif name.startswith("law:"):
                b = kernel.Block(*self.law_parts[int(name[4:])], idx)
            elif name.startswith("res:"):
                p = self.g.player(int(name[4:]))
                exprs = _residual_exprs(p)
                b = kernel.Block(exprs, [-1] * len(exprs), idx)
            else:
                raise KeyError(name)
            self._blocks[key] = b
        return b

    def unpack(self, records: np.ndarray, trajectory_t: np.ndarray, dphi_zero_start=True):
        g, sm = self.g, self.slots
        col = sm.d
        phi = records[:, :sm.d].copy()
        u, uo, eps, v = {}, {}, {}, {}
        if not g.coalitions:
            for p in g.players:
                u[p.id] = records[:, col:col + p.control_dim].copy()
                col += p.control_dim
        for p in g.players:
            uo[p.id] = records[:, col:col + p.control_dim].copy()
            col += p.control_dim
        if self.eps_known:
            for p in g.players:
                eps[p.id] = records[:, col:col + p.eps_dim].copy()
                col += p.eps_dim
        for c in g.coalitions:
            v[c.id] = records[:, col:col + c.control_dim].copy()
            col += c.control_dim
        meta = {"dphi_at_start": "zero (no left difference at the first grid point)"}
        return Trajectory(g.name, g.horizon.step, trajectory_t, phi, u, uo, eps, v, meta)


def compiled(g: GameDefinition) -> CompiledGame:
    cg = g.__dict__.get("_compiled")
    if cg is None:
        cg = CompiledGame(g)
        g.__dict__["_compiled"] = cg   # frozen dataclass: cache outside __setattr__
    return cg


# -- Newton resolution -----------------------------------------------------

def _solve_player(cg: CompiledGame, slots: np.ndarray, p: PlayerSpec, guess) -> int:
    """Damped Newton on the player's residual; writes the solution into ``slots``."""
    res = cg.block(f"res:{p.id}")
    ui = cg.slots.of("u", p.id, p.control_dim)
    m = len(ui)

    def residual():
        return np.array([res.eval(slots, k) for k in range(m)])

    slots[ui] = guess
    r = residual()
    it = 0
    while np.max(np.abs(r), initial=0.0) > NEWTON_TOL:
        if it >= NEWTON_MAX_ITER:
            raise SolverError(f"player {p.id}: Newton did not converge in {NEWTON_MAX_ITER} "
                              f"iterations (residual {np.max(np.abs(r)):.3g})", "NO_CONVERGENCE")
        it += 1
        x = slots[ui].copy()
        J = np.empty((m, m))
        for c, s in enumerate(ui):
            slots[s] = x[c] + FD_DELTA
            up = residual()
            slots[s] = x[c] - FD_DELTA
            lo = residual()
            slots[s] = x[c]
            J[:, c] = (up - lo) / (2.0 * FD_DELTA)
        cond = np.linalg.cond(J) if np.all(np.isfinite(J)) else np.inf
        if not cond <= COND_LIMIT:
            raise SolverError(f"player {p.id}: singular Jacobian (condition {cond:.3g})",
                              "SINGULAR_JACOBIAN")
        dx = np.linalg.solve(J, -r)
        norm0 = np.linalg.norm(r)
        lam = 1.0
        for _ in range(MAX_HALVINGS + 1):
            slots[ui] = x + lam * dx
            try:
                trial = residual()
            except EvalDomainError:
                trial = None
            if trial is not None and np.linalg.norm(trial) < norm0:
                r = trial
                break
            lam *= 0.5
        else:
            slots[ui] = x
            raise SolverError(f"player {p.id}: damped Newton step failed to reduce the residual",
                              "NO_CONVERGENCE")
    return it


def _resolve(cg: CompiledGame, slots: np.ndarray, prev_u: Mapping | None) -> dict:
    iters = {}
    g = cg.g
    for i in cg.order:
        p = g.player(i)
        if _is_newton(p):
            guess = prev_u.get(i) if prev_u else None
            if guess is None:
                guess = slots[cg.slots.of("uo", i, p.control_dim)]
            iters[i] = _solve_player(cg, slots, p, np.asarray(guess, dtype=float))
        else:
            cg.block(f"law:{i}").run(slots)
            iters[i] = 0
    return iters


def _resolution(cg: CompiledGame, slots, iters) -> ControlResolution:
    g, sm = cg.g, cg.slots
    out = ControlResolution(iterations=iters)
    for p in g.players:
        if not g.coalitions:
            out.u[p.id] = tuple(slots[sm.of("u", p.id, p.control_dim)])
        out.uo[p.id] = tuple(slots[sm.of("uo", p.id, p.control_dim)])
        out.eps[p.id] = tuple(slots[sm.of("eps", p.id, p.eps_dim)])
    for c in g.coalitions:
        out.v[c.id] = tuple(slots[sm.of("v", c.id, c.control_dim)])
    return out


def _load_state(cg, s: StateVector, uo, eps, dphi_prev) -> np.ndarray:
    g, sm = cg.g, cg.slots
    if len(s.values) != g.state_dim:
        raise ConfigError(f"state has {len(s.values)} components, game needs {g.state_dim}",
                          "DIMENSION_MISMATCH")
    slots = np.zeros(len(sm))
    slots[sm.index["t"]] = s.t
    slots[sm.index["h"]] = g.horizon.step
    slots[sm.phi] = s.values
    if dphi_prev is not None:
        slots[sm.dphi] = dphi_prev
    for p in g.players:
        vals = list(uo[p.id - 1])
        if len(vals) != p.control_dim:
            raise ConfigError(f"player {p.id}: {len(vals)} pure controls, need {p.control_dim}",
                              "DIMENSION_MISMATCH")
        slots[sm.of("uo", p.id, p.control_dim)] = vals
        evals = list(eps[p.id - 1]) if eps is not None else [0.0] * p.eps_dim
        if len(evals) != p.eps_dim:
            raise ConfigError(f"player {p.id}: {len(evals)} eps values, need {p.eps_dim}",
                              "DIMENSION_MISMATCH")
        slots[sm.of("eps", p.id, p.eps_dim)] = evals
    return slots


def resolve_controls(g: GameDefinition, s: StateVector, uo, eps, dphi_prev=None,
                     u_guess: Mapping | None = None) -> ControlResolution:
    """Realized controls at state ``s`` for pure controls ``uo`` and parameters ``eps``.

    ``uo`` and ``eps`` are per-player sequences in player order.  Inverse and
    implicit laws are solved by damped Newton starting from ``u_guess`` (the
    pure control when omitted).
    """
    cg = compiled(g)
    slots = _load_state(cg, s, uo, eps, dphi_prev)
    iters = _resolve(cg, slots, u_guess)
    if g.coalitions:
        cg.block("post").run(slots)
    return _resolution(cg, slots, iters)


def step(g: GameDefinition, s: StateVector, uo, eps, dphi_prev=None,
         u_guess: Mapping | None = None):
    """One Euler step; returns ``(next state, controls used)``."""
    cg = compiled(g)
    slots = _load_state(cg, s, uo, eps, dphi_prev)
    iters = _resolve(cg, slots, u_guess)
    cg.block("post").run(slots)
    nxt = slots[cg.slots.next]
    if not np.all(np.isfinite(nxt)):
        raise NumericError(f"non-finite state at t={s.t}", "NON_FINITE_STATE")
    return (StateVector(tuple(float(x) for x in nxt), s.t + g.horizon.step),
            _resolution(cg, slots, iters))


# -- simulation ------------------------------------------------------------

def _initial_slots(cg: CompiledGame, phi0, dphi0=None) -> np.ndarray:
    g, sm = cg.g, cg.slots
    slots = np.zeros(len(sm))
    slots[sm.index["h"]] = g.horizon.step
    slots[sm.phi] = phi0
    if dphi0 is not None:
        slots[sm.dphi] = dphi0
    return slots


def simulate(g: GameDefinition) -> Trajectory:
    """Run the game's scenario (a performance) over the whole horizon."""
    diags = validate(g)
    if diags:
        from .errors import GameValidationError
        raise GameValidationError(diags)
    cg = compiled(g)
    if not cg.eps_known:
        raise ConfigError("simulate needs eps_truth for players with eps_dim > 0",
                          "NO_EPS_TRUTH")
    hz = g.horizon
    n = hz.n_steps
    sm = cg.slots
    t_grid = hz.t0 + np.arange(n + 1) * hz.step
    slots = _initial_slots(cg, g.initial_state())
    if cg.all_direct:
        records, err = cg.block("full").rollout(slots, n, 0, hz.t0, hz.step, sm.index["t"],
                                                sm.phi, sm.next, sm.dphi, [], None, cg.rec)
    else:
        records, err = _simulate_stepwise(cg, slots, n)
    traj = cg.unpack(records, t_grid[:len(records)])
    if err is not None:
        raise SimulationError(f"simulation of {g.name!r} failed after {len(records)} samples: "
                              f"{err}", partial=traj, cause=err)
    return traj


def _simulate_stepwise(cg: CompiledGame, slots: np.ndarray, n: int):
    g, sm = cg.g, cg.slots
    hz = g.horizon
    pre, post = cg.block("pre"), cg.block("post")
    rows = []
    prev_u = None
    t_slot = sm.index["t"]
    try:
        for k in range(n + 1):
            slots[t_slot] = hz.t0 + k * hz.step
            pre.run(slots)
            _resolve(cg, slots, prev_u)
            post.run(slots)
            rows.append(slots[cg.rec].copy())
            if k == n:
                break
            prev_u = {p.id: slots[sm.of("u", p.id, p.control_dim)].copy() for p in g.players}
            nxt = slots[sm.next].copy()
            if not np.all(np.isfinite(nxt)):
                raise NumericError(f"non-finite state at t={slots[t_slot]}", "NON_FINITE_STATE")
            slots[sm.dphi] = (nxt - slots[sm.phi]) / hz.step
            slots[sm.phi] = nxt
    except IGameError as exc:
        return np.array(rows).reshape(len(rows), len(cg.rec)), exc
    return np.array(rows).reshape(len(rows), len(cg.rec)), None


def rollout(g: GameDefinition, phi_start, k_start: int, nsteps: int, *,
            dphi_start=None, input_uo: Mapping[int, np.ndarray] | None = None,
            law_override: Mapping[int, Sequence[Expr]] | None = None,
            eps_mode: str = "zero"):
    """Integrate from grid index ``k_start`` for ``nsteps`` steps with custom controls.

    ``input_uo[i]`` (shape ``(nsteps+1, control_dim)``) replaces player ``i``'s
    scenario; ``law_override[i]`` replaces its direct law.  ``eps_mode`` is
    ``"zero"`` or ``"truth"``.  Returns ``(phi, u, uo)`` arrays / dicts with
    ``nsteps + 1`` rows.  All laws must be in direct form.
    """
    if g.coalitions:
        raise ConfigError("custom rollouts support plain games only", "COALITION_GAME")
    input_uo = dict(input_uo or {})
    law_override = dict(law_override or {})
    for p in g.players:
        if p.id not in law_override and _is_newton(p):
            raise ConfigError(f"player {p.id}: rollouts need direct-form laws "
                              "(use exclude_derivative or a law override)", "NOT_DIRECT")
    cg = compiled(g)
    sm = cg.slots
    idx = sm.index
    exprs, targets = [], []
    for p, row in zip(g.players, g.scenario.uo):
        if p.id in input_uo:
            continue
        for j, e in enumerate(row):
            exprs.append(e)
            targets.append(idx[f"uo[{p.id}][{j}]"])
    if eps_mode == "truth" and g.eps_truth is not None:
        for p, row in zip(g.players, g.eps_truth):
            for j, e in enumerate(row):
                exprs.append(e)
                targets.append(idx[f"eps[{p.id}][{j}]"])
    for i in cg.order:
        p = g.player(i)
        law = law_override.get(i, p.feedback.exprs if p.feedback else ())
        exprs += list(law)
        targets += sm.of("u", i, p.control_dim)
    exprs += _next_exprs(g)
    targets += sm.next

    key = ("rollout", tuple(sorted(input_uo)), eps_mode, kernel.backend_name())
    block = None if law_override else cg._blocks.get(key)
    if block is None:
        block = kernel.Block(exprs, targets, idx)
        if not law_override:
            cg._blocks[key] = block

    in_slots, cols = [], []
    for i in sorted(input_uo):
        p = g.player(i)
        in_slots += sm.of("uo", i, p.control_dim)
        cols.append(np.asarray(input_uo[i], dtype=float).reshape(nsteps + 1, p.control_dim))
    in_values = np.hstack(cols) if cols else None
    rec = list(sm.phi)
    for p in g.players:
        rec += sm.of("u", p.id, p.control_dim)
    for p in g.players:
        rec += sm.of("uo", p.id, p.control_dim)
    slots = _initial_slots(cg, phi_start, dphi_start)
    records, err = block.rollout(slots, nsteps, k_start, g.horizon.t0, g.horizon.step,
                                 idx["t"], sm.phi, sm.next, sm.dphi, in_slots, in_values, rec)
    if err is not None:
        raise err
    d = g.state_dim
    phi = records[:, :d]
    col = d
    u, uo = {}, {}
    for p in g.players:
        u[p.id] = records[:, col:col + p.control_dim]
        col += p.control_dim
    for p in g.players:
        uo[p.id] = records[:, col:col + p.control_dim]
        col += p.control_dim
    return phi, u, uo


# -- derivative exclusion --------------------------------------------------

def _law_residual(p: PlayerSpec) -> list[Expr]:
    law = p.feedback
    if law.form == "direct":
        return [BinOp("-", Var(f"u[{p.id}][{j}]"), e) for j, e in enumerate(law.exprs)]
    return _residual_exprs(p)


def exclude_derivative(g: GameDefinition) -> GameDefinition:
    """Replace ``dphi`` in every order-1 law by the dynamics and return to direct form.

    The resulting relation is solved for the player's control when it is
    scalar and affine in it; otherwise it is kept as an implicit law.
    """
    laws = [p.feedback for p in g.players if p.feedback is not None]
    if any(law.order >= 2 for law in laws):
        raise ConfigError("derivative order >= 2 is not supported", "UNSUPPORTED_ORDER")
    if not any(law.order == 1 for law in laws):
        return g
    if g.coalitions:
        raise ConfigError("derivative exclusion applies to plain games", "COALITION_GAME")
    dyn = {f"dphi[{j}]": e for j, e in enumerate(g.dynamics)}
    players = []
    for k, p in enumerate(g.players):
        law = p.feedback
        if law is None or law.order == 0:
            players.append(p)
            continue
        residual = [substitute(r, dyn) for r in _law_residual(p)]
        new_law = None
        if p.control_dim == 1:
            var = f"u[{p.id}][0]"
            split = affine_split(residual[0], var)
            if split is not None:
                coef, rest = split
                _check_coefficient(g, k, p, coef)
                new_law = FeedbackLaw("direct", (simplify(BinOp("/", Neg(rest), coef)),), 0)
        if new_law is None:
            new_law = FeedbackLaw("implicit", tuple(simplify(r) for r in residual), 0)
        players.append(replace(p, feedback=new_law))
    out = replace(g, players=tuple(players))
    law_order(out)
    return out


def _check_coefficient(g, k, p, coef):
    if constant_value(coef) == 0.0:
        raise SubstitutionError(f"player {p.id}: control coefficient vanishes identically after "
                                "substituting the dynamics")
    if g.eps_truth is None:
        return
    consts = {}
    for j, e in enumerate(g.eps_truth[k]):
        c = constant_value(e)
        if c is not None:
            consts[f"eps[{p.id}][{j}]"] = Num(c)
    if consts and constant_value(substitute(coef, consts)) == 0.0:
        raise SubstitutionError(f"player {p.id}: control coefficient {coef} vanishes for the "
                                "declared eps_truth")
