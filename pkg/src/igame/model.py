"""Game definitions: loading, validation, serialization, associated games."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Mapping

import jsonschema

from .errors import ConfigError, ExprSyntaxError, GameValidationError
from .exprlang import Expr, Num, Var, free_variables, parse, split_name, substitute, to_text

FORMS = ("direct", "inverse", "implicit")


@dataclass(frozen=True)
class FeedbackLaw:
    form: str
    exprs: tuple
    order: int = 0


@dataclass(frozen=True)
class PlayerSpec:
    id: int
    control_dim: int
    feedback: FeedbackLaw | None
    eps_dim: int = 0


@dataclass(frozen=True)
class CoalitionSpec:
    id: int
    members: tuple      # sorted player ids
    control_dim: int
    exprs: tuple


@dataclass(frozen=True)
class Horizon:
    t0: float
    t1: float
    step: float

    @property
    def n_steps(self) -> int:
        return int(round((self.t1 - self.t0) / self.step))

    def grid(self):
        return [self.t0 + k * self.step for k in range(self.n_steps + 1)]


@dataclass(frozen=True)
class Scenario:
    """Pure controls ``uo[i][j](t)``; ``uo[i-1]`` belongs to player ``i``."""
    uo: tuple


@dataclass(frozen=True)
class GameDefinition:
    name: str
    state_dim: int
    players: tuple
    dynamics: tuple
    horizon: Horizon
    scenario: Scenario
    coalitions: tuple = ()
    eps_truth: tuple | None = None
    phi0: tuple | None = None

    @property
    def n_players(self) -> int:
        return len(self.players)

    @property
    def is_coalition(self) -> bool:
        return bool(self.coalitions)

    def player(self, i: int) -> PlayerSpec:
        return self.players[i - 1]

    def initial_state(self) -> tuple:
        return tuple(self.phi0) if self.phi0 is not None else (0.0,) * self.state_dim


@dataclass(frozen=True)
class Diagnostic:
    code: str
    path: str
    message: str


# -- validation ------------------------------------------------------------

def _law_dependencies(g: GameDefinition) -> dict:
    deps = {}
    for p in g.players:
        if p.feedback is None:
            continue
        refs = set()
        for e in p.feedback.exprs:
            for name in free_variables(e):
                parts = split_name(name)
                if parts[0] == "u" and parts[1] != p.id:
                    refs.add(parts[1])
        deps[p.id] = refs
    return deps


def law_order(g: GameDefinition) -> list[int]:
    """Player ids ordered so that every law sees the other players' controls it references.

    Raises ``ConfigError`` (CYCLIC_DEPENDENCY) on a reference cycle.
    """
    deps = _law_dependencies(g)
    order, state = [], {}

    def visit(i, chain):
        if state.get(i) == 2:
            return
        if state.get(i) == 1:
            raise ConfigError(f"cyclic control dependency through players {chain}",
                              "CYCLIC_DEPENDENCY")
        state[i] = 1
        for j in sorted(deps.get(i, ())):
            visit(j, chain + [j])
        state[i] = 2
        order.append(i)

    for p in g.players:
        visit(p.id, [p.id])
    return order


class _Checker:
    def __init__(self, g: GameDefinition):
        self.g = g
        self.out: list[Diagnostic] = []
        self.n = len(g.players)
        self.dims = {p.id: p for p in g.players}
        self.coal = {c.id: c for c in g.coalitions}

    def add(self, code, path, msg):
        self.out.append(Diagnostic(code, path, msg))

    def check_vars(self, e: Expr, path: str, allow: Mapping[str, Any], own: int | None = None,
                   members=None):
        """``allow`` maps variable heads to True, 'own', 'members' or 'others'."""
        d = self.g.state_dim
        for name in sorted(free_variables(e)):
            parts = split_name(name)
            head = parts[0]
            rule = allow.get(head)
            if rule is None:
                self.add("FORBIDDEN_VARIABLE", path, f"{name} not allowed here")
                continue
            if head in ("phi", "dphi"):
                if parts[1] >= d:
                    self.add("INDEX_OUT_OF_RANGE", path, f"{name}: state has {d} components")
                continue
            if head in ("t", "h"):
                continue
            i, j = parts[1], parts[2]
            if head == "v":
                c = self.coal.get(i)
                if c is None:
                    self.add("UNKNOWN_COALITION", path, f"{name}: no coalition {i}")
                elif j >= c.control_dim:
                    self.add("INDEX_OUT_OF_RANGE", path,
                             f"{name}: coalition {i} has control_dim {c.control_dim}")
                continue
            p = self.dims.get(i)
            if p is None:
                self.add("UNKNOWN_PLAYER", path, f"{name}: no player {i}")
                continue
            if rule == "own" and i != own:
                self.add("FOREIGN_VARIABLE", path, f"{name} belongs to another player")
                continue
            if rule == "members" and i not in members:
                self.add("NON_MEMBER_CONTROL", path, f"{name}: player {i} not a member")
                continue
            if rule == "others" and i == own:
                self.add("SELF_REFERENCE", path, f"direct law defines {name} in terms of itself")
                continue
            size = p.eps_dim if head == "eps" else p.control_dim
            if j >= size:
                self.add("INDEX_OUT_OF_RANGE", path, f"{name}: player {i} has dimension {size}")

    def run(self) -> list[Diagnostic]:
        g = self.g
        if g.state_dim < 1:
            self.add("DIMENSION_MISMATCH", "state_dim", "state_dim must be positive")
        if len(g.dynamics) != g.state_dim:
            self.add("DIMENSION_MISMATCH", "dynamics",
                     f"{len(g.dynamics)} dynamics entries for state_dim {g.state_dim}")
        if self.n < 1:
            self.add("DIMENSION_MISMATCH", "players", "at least one player required")
        for k, p in enumerate(g.players):
            if p.id != k + 1:
                self.add("PLAYER_IDS", f"players[{k}].id", f"expected id {k + 1}, got {p.id}")
            if p.control_dim < 0 or p.eps_dim < 0:
                self.add("DIMENSION_MISMATCH", f"players[{k}]", "negative dimension")
        h = g.horizon
        if not (h.step > 0 and h.t1 > h.t0):
            self.add("HORIZON", "horizon", "need step > 0 and t1 > t0")
        else:
            q = (h.t1 - h.t0) / h.step
            if abs(q - round(q)) > math.ulp(q):
                self.add("HORIZON", "horizon", f"(t1 - t0)/step = {q!r} is not an integer")
        if g.phi0 is not None and len(g.phi0) != g.state_dim:
            self.add("DIMENSION_MISMATCH", "phi0", f"phi0 has {len(g.phi0)} entries")

        head = "v" if g.coalitions else "u"
        for j, e in enumerate(g.dynamics):
            path = f"dynamics[{j}]"
            other = "u" if head == "v" else "v"
            if any(split_name(n)[0] == other for n in free_variables(e)):
                self.add("MIXED_CONTROLS", path,
                         f"dynamics of a {'coalition' if g.coalitions else 'plain'} game "
                         f"must use {head}[.][.] only")
                continue
            self.check_vars(e, path, {"t": True, "h": True, "phi": True, head: True})

        for k, p in enumerate(g.players):
            self.check_player(k, p)
        if not g.coalitions:
            try:
                law_order(g)
            except ConfigError as exc:
                self.add("CYCLIC_DEPENDENCY", "players", str(exc))
        for k, c in enumerate(g.coalitions):
            path = f"coalitions[{k}]"
            if c.id != k + 1:
                self.add("COALITION_IDS", f"{path}.id", f"expected id {k + 1}, got {c.id}")
            if not c.members:
                self.add("DIMENSION_MISMATCH", f"{path}.members", "empty coalition")
            for m in c.members:
                if m not in self.dims:
                    self.add("UNKNOWN_PLAYER", f"{path}.members", f"no player {m}")
            if len(c.exprs) != c.control_dim:
                self.add("DIMENSION_MISMATCH", f"{path}.exprs",
                         f"{len(c.exprs)} exprs for control_dim {c.control_dim}")
            for j, e in enumerate(c.exprs):
                self.check_vars(e, f"{path}.exprs[{j}]",
                                {"t": True, "h": True, "phi": True, "uo": "members",
                                 "eps": "members"}, members=set(c.members))

        self.check_scenario()
        return self.out

    def check_player(self, k, p):
        path = f"players[{k}].feedback"
        law = p.feedback
        if law is None:
            if not self.g.coalitions:
                self.add("MISSING_FEEDBACK", path, "plain games need a feedback law per player")
            return
        if law.form not in FORMS:
            self.add("UNKNOWN_FORM", f"{path}.form", f"form must be one of {FORMS}")
        if law.order not in (0, 1):
            self.add("UNSUPPORTED_ORDER", f"{path}.order",
                     f"derivative order {law.order} unsupported (0 or 1)")
        if len(law.exprs) != p.control_dim:
            self.add("DIMENSION_MISMATCH", f"{path}.exprs",
                     f"{len(law.exprs)} exprs for control_dim {p.control_dim}")
        allow = {"t": True, "h": True, "phi": True, "dphi": True, "uo": "own", "eps": "own",
                 "u": "others" if law.form == "direct" else True}
        for j, e in enumerate(law.exprs):
            fv = free_variables(e)
            if law.order == 0 and any(n.startswith("dphi[") for n in fv):
                self.add("DERIVATIVE_ORDER", f"{path}.exprs[{j}]",
                         "dphi appears in an order-0 law")
            self.check_vars(e, f"{path}.exprs[{j}]", allow, own=p.id)

    def check_scenario(self):
        g = self.g
        if len(g.scenario.uo) != self.n:
            self.add("DIMENSION_MISMATCH", "scenario.uo",
                     f"{len(g.scenario.uo)} scenario rows for {self.n} players")
        for k, (row, p) in enumerate(zip(g.scenario.uo, g.players)):
            if len(row) != p.control_dim:
                self.add("DIMENSION_MISMATCH", f"scenario.uo[{k}]",
                         f"{len(row)} entries for control_dim {p.control_dim}")
            for j, e in enumerate(row):
                extra = free_variables(e) - {"t"}
                if extra:
                    self.add("SCENARIO_VARIABLE", f"scenario.uo[{k}][{j}]",
                             f"scenario may depend on t only, found {sorted(extra)}")
        if g.eps_truth is None:
            return
        if len(g.eps_truth) != self.n:
            self.add("DIMENSION_MISMATCH", "eps_truth",
                     f"{len(g.eps_truth)} eps_truth rows for {self.n} players")
        for k, (row, p) in enumerate(zip(g.eps_truth, g.players)):
            if len(row) != p.eps_dim:
                self.add("DIMENSION_MISMATCH", f"eps_truth[{k}]",
                         f"{len(row)} entries for eps_dim {p.eps_dim}")
            for j, e in enumerate(row):
                self.check_vars(e, f"eps_truth[{k}][{j}]",
                                {"t": True, "h": True, "phi": True, "uo": "own"}, own=p.id)


def validate(g: GameDefinition) -> list[Diagnostic]:
    """All invariant violations of ``g``; empty when the game is well formed."""
    return _Checker(g).run()


# -- JSON I/O --------------------------------------------------------------

_EXPRS = {"type": "array", "items": {"type": "string"}}

GAME_SCHEMA = {
    "type": "object",
    "required": ["name", "state_dim", "players", "dynamics", "horizon", "scenario"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "state_dim": {"type": "integer", "minimum": 1},
        "players": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object",
                "required": ["id", "control_dim"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "control_dim": {"type": "integer", "minimum": 0},
                    "eps_dim": {"type": "integer", "minimum": 0},
                    "feedback": {
                        "type": "object",
                        "required": ["form", "exprs"],
                        "additionalProperties": False,
                        "properties": {
                            "form": {"enum": list(FORMS)},
                            "exprs": _EXPRS,
                            "order": {"type": "integer", "minimum": 0},
                        },
                    },
                },
            },
        },
        "dynamics": _EXPRS,
        "coalitions": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "members", "control_dim", "exprs"],
                "additionalProperties": False,
                "properties": {
                    "id": {"type": "integer", "minimum": 1},
                    "members": {"type": "array", "items": {"type": "integer"}, "minItems": 1},
                    "control_dim": {"type": "integer", "minimum": 1},
                    "exprs": _EXPRS,
                },
            },
        },
        "horizon": {
            "type": "object",
            "required": ["t0", "t1", "step"],
            "additionalProperties": False,
            "properties": {"t0": {"type": "number"}, "t1": {"type": "number"},
                           "step": {"type": "number", "exclusiveMinimum": 0}},
        },
        "scenario": {
            "type": "object", "required": ["uo"], "additionalProperties": False,
            "properties": {"uo": {"type": "array", "items": _EXPRS}},
        },
        "eps_truth": {"type": "array", "items": _EXPRS},
        "phi0": {"type": "array", "items": {"type": "number"}},
    },
}


def _parse_field(text: str, path: str) -> Expr:
    try:
        return parse(text)
    except ExprSyntaxError as exc:
        err = ExprSyntaxError(f"{path}: {exc.args[0].split(' at offset')[0]}", exc.offset,
                              exc.expected, exc.code)
        err.field = path
        raise err from None


def _parse_list(texts, path):
    return tuple(_parse_field(s, f"{path}[{j}]") for j, s in enumerate(texts))


def game_from_dict(doc: Mapping[str, Any], check: bool = True) -> GameDefinition:
    errors = sorted(jsonschema.Draft202012Validator(GAME_SCHEMA).iter_errors(doc),
                    key=lambda e: list(map(str, e.absolute_path)))
    if errors:
        diags = [Diagnostic("SCHEMA", "/".join(map(str, e.absolute_path)) or "<root>", e.message)
                 for e in errors]
        raise GameValidationError(diags)
    players = []
    for k, p in enumerate(doc["players"]):
        fb = p.get("feedback")
        law = None
        if fb is not None:
            law = FeedbackLaw(fb["form"], _parse_list(fb["exprs"], f"players[{k}].feedback.exprs"),
                              int(fb.get("order", 0)))
        players.append(PlayerSpec(int(p["id"]), int(p["control_dim"]), law,
                                  int(p.get("eps_dim", 0))))
    coalitions = tuple(
        CoalitionSpec(int(c["id"]), tuple(sorted(set(c["members"]))), int(c["control_dim"]),
                      _parse_list(c["exprs"], f"coalitions[{k}].exprs"))
        for k, c in enumerate(doc.get("coalitions") or ()))
    hz = doc["horizon"]
    eps_truth = doc.get("eps_truth")
    g = GameDefinition(
        name=doc["name"],
        state_dim=int(doc["state_dim"]),
        players=tuple(players),
        dynamics=_parse_list(doc["dynamics"], "dynamics"),
        horizon=Horizon(float(hz["t0"]), float(hz["t1"]), float(hz["step"])),
        scenario=Scenario(tuple(_parse_list(row, f"scenario.uo[{k}]")
                                for k, row in enumerate(doc["scenario"]["uo"]))),
        coalitions=coalitions,
        eps_truth=None if eps_truth is None else tuple(
            _parse_list(row, f"eps_truth[{k}]") for k, row in enumerate(eps_truth)),
        phi0=None if doc.get("phi0") is None else tuple(float(x) for x in doc["phi0"]),
    )
    if check:
        diags = validate(g)
        if diags:
            raise GameValidationError(diags)
    return g


def load_game(document: str | bytes | Mapping[str, Any]) -> GameDefinition:
    """Parse and validate a game from JSON text (or an already decoded mapping)."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise GameValidationError([Diagnostic("JSON", f"offset {exc.pos}", exc.msg)]) from None
    if not isinstance(document, Mapping):
        raise GameValidationError([Diagnostic("SCHEMA", "<root>", "game must be a JSON object")])
    return game_from_dict(document)


def load_game_file(path: str | Path) -> GameDefinition:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read game file {path}: {exc}") from None
    return load_game(text)


def game_to_dict(g: GameDefinition) -> dict:
    texts = lambda es: [to_text(e) for e in es]  # noqa: E731
    players = []
    for p in g.players:
        d = {"id": p.id, "control_dim": p.control_dim, "eps_dim": p.eps_dim}
        if p.feedback is not None:
            d["feedback"] = {"form": p.feedback.form, "exprs": texts(p.feedback.exprs),
                             "order": p.feedback.order}
        players.append(d)
    doc = {
        "name": g.name,
        "state_dim": g.state_dim,
        "players": players,
        "dynamics": texts(g.dynamics),
        "horizon": {"t0": g.horizon.t0, "t1": g.horizon.t1, "step": g.horizon.step},
        "scenario": {"uo": [texts(row) for row in g.scenario.uo]},
    }
    if g.coalitions:
        doc["coalitions"] = [{"id": c.id, "members": list(c.members),
                              "control_dim": c.control_dim, "exprs": texts(c.exprs)}
                             for c in g.coalitions]
    if g.eps_truth is not None:
        doc["eps_truth"] = [texts(row) for row in g.eps_truth]
    if g.phi0 is not None:
        doc["phi0"] = list(g.phi0)
    return doc


def dump_game(g: GameDefinition) -> str:
    return json.dumps(game_to_dict(g), indent=2) + "\n"


def with_eps_truth(g: GameDefinition, rows) -> GameDefinition:
    """Copy of ``g`` with eps_truth replaced (rows of expression text or Expr)."""
    rows = tuple(tuple(parse(e) if isinstance(e, str) else e for e in r) for r in rows)
    return replace(g, eps_truth=rows)


def zero_eps_truth(g: GameDefinition) -> tuple:
    return tuple((Num(0.0),) * p.eps_dim for p in g.players)


# -- associated ordinary game ----------------------------------------------

def _identity_law(i: int, dim: int) -> FeedbackLaw:
    return FeedbackLaw("direct", tuple(Var(f"uo[{i}][{j}]") for j in range(dim)), 0)


def build_associated_game(g: GameDefinition, drive_eps: bool = False) -> GameDefinition:
    """Promote every epsilon to an independent control of a virtual player.

    Player ``i`` keeps slot ``i`` and controls its pure control directly; the
    virtual players ``n+1, ...`` control the epsilons (one per player for plain
    games, one collective player per coalition).  All laws of the new game are
    identities, so its controls are ordinary.  With ``drive_eps`` the virtual
    players play ``g.eps_truth`` as a state feedback instead of a scenario.
    """
    for p in g.players:
        if p.feedback is not None and (p.feedback.form != "direct" or p.feedback.order != 0):
            raise ConfigError(f"player {p.id}: associated game needs direct order-0 laws "
                              "(run exclude_derivative first)", "NOT_DIRECT")
    if drive_eps and g.eps_truth is None and any(p.eps_dim for p in g.players):
        raise ConfigError("drive_eps requires eps_truth", "NO_EPS_TRUTH")
    n = g.n_players
    players = [PlayerSpec(p.id, p.control_dim, _identity_law(p.id, p.control_dim), 0)
               for p in g.players]
    scenario = list(g.scenario.uo)
    virtual = []      # (id, dim, [(player, eps component) per slot component])

    if g.coalitions:
        for c in g.coalitions:
            parts = [(m, k) for m in c.members for k in range(g.player(m).eps_dim)]
            virtual.append((n + c.id, parts))
    else:
        for p in g.players:
            virtual.append((n + p.id, [(p.id, k) for k in range(p.eps_dim)]))

    def renames(vid, parts):
        m = {f"eps[{pi}][{k}]": Var(f"u[{vid}][{slot}]") for slot, (pi, k) in enumerate(parts)}
        for p in g.players:
            for k in range(p.control_dim):
                m[f"uo[{p.id}][{k}]"] = Var(f"u[{p.id}][{k}]")
        return m

    for vid, parts in virtual:
        if drive_eps:
            ren = {f"uo[{p.id}][{k}]": Var(f"u[{p.id}][{k}]")
                   for p in g.players for k in range(p.control_dim)}
            exprs = tuple(substitute(g.eps_truth[pi - 1][k], ren) for pi, k in parts)
            law = FeedbackLaw("direct", exprs, 0)
        else:
            law = _identity_law(vid, len(parts))
        players.append(PlayerSpec(vid, len(parts), law, 0))
        scenario.append((Num(0.0),) * len(parts))

    if g.coalitions:
        mapping = {}
        for (vid, parts), c in zip(virtual, g.coalitions):
            ren = renames(vid, parts)
            for j, e in enumerate(c.exprs):
                mapping[f"v[{c.id}][{j}]"] = substitute(e, ren)
    else:
        by_player = dict(virtual)
        expanded: dict[str, Expr] = {}
        for i in law_order(g):
            vid = n + i
            ren = renames(vid, by_player[vid])
            ren.update(expanded)
            for j, e in enumerate(g.player(i).feedback.exprs):
                expanded[f"u[{i}][{j}]"] = substitute(e, ren)
        mapping = expanded
    dynamics = tuple(substitute(e, mapping) for e in g.dynamics)
    return GameDefinition(
        name=f"{g.name}/associated",
        state_dim=g.state_dim,
        players=tuple(players),
        dynamics=dynamics,
        horizon=g.horizon,
        scenario=Scenario(tuple(scenario)),
        coalitions=(),
        eps_truth=None,
        phi0=g.phi0,
    )
