"""A posteriori recovery of feedback parameters from an observed trajectory.

Each sample is inverted independently: given the observed realized control
``u``, the pure control ``uo`` and the state, find ``eps`` with
``u = law(uo, phi; eps)``.  The law is known; only ``eps`` is unknown.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import kernel
from .engine import SlotMap
from .errors import ConfigError, EvalDomainError
from .model import GameDefinition
from .trajectory import Trajectory, fmt

IDENTIFIED = "IDENTIFIED"
UNIDENTIFIABLE = "UNIDENTIFIABLE"
NO_CONVERGENCE = "NO_CONVERGENCE"

FD_DELTA = 1e-7
TOL = 1e-9
LSQ_ACCEPT = 1e-6
MAX_ITER = 100
MAX_HALVINGS = 20


@dataclass
class PlayerEpsilon:
    eps: np.ndarray                 # (N, eps_dim); NaN where not identified
    flags: list
    residual: np.ndarray            # max-norm residual of the law at the returned eps
    iterations: np.ndarray


@dataclass
class EpsilonTrace:
    t: np.ndarray
    players: dict = field(default_factory=dict)
    threshold: float = 1e-8

    def identified(self, i: int) -> np.ndarray:
        return np.array([f == IDENTIFIED for f in self.players[i].flags])

    def to_csv(self) -> str:
        width = max((pe.eps.shape[1] for pe in self.players.values()), default=0)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "player"] + [f"eps_{j}" for j in range(width)] + ["flag", "residual"])
        for k, t in enumerate(self.t):
            for i in sorted(self.players):
                pe = self.players[i]
                vals = ["" if np.isnan(x) else fmt(x) for x in pe.eps[k]]
                vals += [""] * (width - len(vals))
                w.writerow([fmt(t), i] + vals + [pe.flags[k], fmt(pe.residual[k])])
        return buf.getvalue()


def _check_columns(g: GameDefinition, traj: Trajectory):
    missing = []
    for p in g.players:
        for head, table in (("u", traj.u), ("uo", traj.uo)):
            a = table.get(p.id)
            if a is None or a.shape[1] != p.control_dim:
                missing.append(f"{head}_{p.id}_*")
    if traj.state_dim != g.state_dim:
        missing.append("phi_*")
    if missing:
        raise ConfigError("trajectory lacks columns: " + ", ".join(missing), "MISSING_COLUMNS")


def recover_epsilon(g: GameDefinition, traj: Trajectory, threshold: float = 1e-8,
                    warm_start: bool = True) -> EpsilonTrace:
    """Per-sample Gauss-Newton inversion of every player's law for ``eps``.

    Samples whose finite-difference Jacobian has smallest singular value below
    ``threshold`` are flagged UNIDENTIFIABLE and get no value.  With
    ``warm_start`` each solve starts from the previous identified value.
    """
    if g.coalitions:
        raise ConfigError("epsilon recovery needs per-player realized controls; "
                          "coalition games record only coalition controls", "COALITION_GAME")
    for p in g.players:
        law = p.feedback
        if law is None or law.form != "direct" or law.order != 0:
            raise ConfigError(f"player {p.id}: recovery needs a direct order-0 law "
                              "(run exclude_derivative first)", "NOT_DIRECT")
        if p.eps_dim > p.control_dim:
            raise ConfigError(f"player {p.id}: eps_dim {p.eps_dim} exceeds control_dim "
                              f"{p.control_dim}; eps is not identifiable", "UNDERDETERMINED")
    _check_columns(g, traj)

    sm = SlotMap(g)
    table = np.zeros((len(traj), len(sm)))
    cols = traj.variables()
    for name, k in sm.index.items():
        if name in cols:
            table[:, k] = cols[name]
    table[:, sm.index["h"]] = g.horizon.step

    out = EpsilonTrace(t=traj.t.copy(), threshold=threshold)
    for p in g.players:
        n = len(traj)
        eps_out = np.full((n, p.eps_dim), np.nan)
        flags = [IDENTIFIED] * n
        resid = np.zeros(n)
        iters = np.zeros(n, dtype=int)
        if p.eps_dim == 0:
            out.players[p.id] = PlayerEpsilon(eps_out, flags, resid, iters)
            continue
        block = kernel.Block(p.feedback.exprs, [-1] * p.control_dim, sm.index)
        eps_slots = sm.of("eps", p.id, p.eps_dim)
        u_obs_all = traj.u[p.id]
        guess = np.zeros(p.eps_dim)
        for k in range(n):
            slots = table[k].copy()
            start = guess if warm_start else np.zeros(p.eps_dim)
            flag, e, r, it = _invert(block, slots, eps_slots, u_obs_all[k], start, threshold)
            flags[k] = flag
            resid[k] = r
            iters[k] = it
            if flag == IDENTIFIED:
                eps_out[k] = e
                guess = e
        out.players[p.id] = PlayerEpsilon(eps_out, flags, resid, iters)
    return out


def _invert(block, slots, eps_slots, u_obs, start, threshold):
    m = len(u_obs)
    ne = len(eps_slots)
    square = m == ne

    def resid(e):
        slots[eps_slots] = e
        return np.array([block.eval(slots, j) for j in range(m)]) - u_obs

    def jac(e):
        J = np.empty((m, ne))
        for c in range(ne):
            up = e.copy()
            up[c] += FD_DELTA
            lo = e.copy()
            lo[c] -= FD_DELTA
            J[:, c] = (resid(up) - resid(lo)) / (2.0 * FD_DELTA)
        return J

    e = np.array(start, dtype=float)
    it = 0
    try:
        r = resid(e)
        while it < MAX_ITER:
            J = jac(e)
            smin = np.linalg.svd(J, compute_uv=False)[-1] if np.all(np.isfinite(J)) else 0.0
            if not smin >= threshold:
                return UNIDENTIFIABLE, None, float(np.max(np.abs(r))), it
            dx = np.linalg.lstsq(J, -r, rcond=None)[0]
            norm0 = np.linalg.norm(r)
            if np.max(np.abs(r)) <= TOL:
                # converged: keep one refinement step only if it helps
                trial = resid(e + dx)
                if np.linalg.norm(trial) < norm0:
                    e = e + dx
                break
            lam = 1.0
            trial = None
            for _ in range(MAX_HALVINGS + 1):
                try:
                    cand = resid(e + lam * dx)
                except EvalDomainError:
                    cand = None
                if cand is not None and np.linalg.norm(cand) < norm0:
                    trial = cand
                    break
                lam *= 0.5
            if trial is None:
                break
            e = e + lam * dx
            r = trial
            it += 1
    except EvalDomainError:
        return NO_CONVERGENCE, None, float("inf"), it
    r = resid(e)
    rmax = float(np.max(np.abs(r)))
    if rmax <= TOL or (not square and rmax <= LSQ_ACCEPT):
        return IDENTIFIED, e, rmax, it
    return NO_CONVERGENCE, None, rmax, it
