"""Arithmetic expression language for dynamics, feedback laws and scenarios.

Grammar (lowest to highest precedence)::

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := '-' unary | power
    power  := atom ('^' unary)?          # right associative
    atom   := number | 'pi' | 'e' | var | func '(' args ')' | '(' expr ')'
    var    := 't' | 'h' | ('phi' | 'dphi') '[' int ']'
            | ('u' | 'uo' | 'eps' | 'v') '[' int ']' '[' int ']'

Unary minus binds looser than ``^``, so ``-2^2`` is ``-(2^2)``.
Player indices start at 1, component indices at 0.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Mapping, Union

from . import _scalar
from .errors import EvalDomainError, ExprSyntaxError, UnboundVariableError

FUNCTIONS = {"sin": 1, "cos": 1, "exp": 1, "log": 1, "tanh": 1, "sqrt": 1, "abs": 1,
             "min": 2, "max": 2}
CONSTANTS = {"pi": math.pi, "e": math.e}
SCALAR_VARS = ("t", "h")
VECTOR_VARS = ("phi", "dphi")
MATRIX_VARS = ("u", "uo", "eps", "v")


# -- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple


Expr = Union[Num, Var, Neg, BinOp, Call]
Env = Mapping[str, float]

_VAR_RE = re.compile(r"^(?:t|h|(?:phi|dphi)\[\d+\]|(?:u|uo|eps|v)\[[1-9]\d*\]\[\d+\])$")


def is_variable_name(name: str) -> bool:
    return bool(_VAR_RE.match(name))


def split_name(name: str) -> tuple:
    """``'u[2][0]'`` -> ``('u', 2, 0)``; ``'phi[1]'`` -> ``('phi', 1)``; ``'t'`` -> ``('t',)``."""
    head, _, rest = name.partition("[")
    if not rest:
        return (head,)
    idx = tuple(int(p) for p in rest.rstrip("]").split("]["))
    return (head,) + idx


# -- lexer -----------------------------------------------------------------

_TOKEN_RE = re.compile(r"""
    (?P<ws>\s+)
  | (?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>[-+*/^()\[\],])
""", re.VERBOSE)


@dataclass(frozen=True)
class _Tok:
    kind: str   # num, ident, op, eof
    text: str
    pos: int    # character index


def _tokenize(src: str) -> list:
    toks = []
    i = 0
    while i < len(src):
        m = _TOKEN_RE.match(src, i)
        if m is None:
            raise ExprSyntaxError(f"unexpected character {src[i]!r}", _byte_offset(src, i),
                                  frozenset({"number", "identifier", "operator"}))
        if m.lastgroup != "ws":
            toks.append(_Tok(m.lastgroup, m.group(), i))
        i = m.end()
    toks.append(_Tok("eof", "", len(src)))
    return toks


def _byte_offset(src: str, i: int) -> int:
    return len(src[:i].encode("utf-8"))


# -- parser ----------------------------------------------------------------

_ATOM_START = frozenset({"number", "identifier", "(", "-"})


class _Parser:
    def __init__(self, src: str):
        self.src = src
        self.toks = _tokenize(src)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def fail(self, msg, expected=frozenset(), tok=None, code=None):
        tok = tok or self.tok
        raise ExprSyntaxError(msg, _byte_offset(self.src, tok.pos), frozenset(expected), code)

    def accept(self, text):
        if self.tok.kind == "op" and self.tok.text == text:
            self.i += 1
            return True
        return False

    def expect(self, text):
        if not self.accept(text):
            found = self.tok.text or "end of input"
            self.fail(f"expected {text!r}, found {found!r}", {text})

    def parse(self) -> Expr:
        e = self.expr()
        if self.tok.kind != "eof":
            self.fail(f"unexpected {self.tok.text!r}",
                      {"+", "-", "*", "/", "^", "end of input"})
        return e

    def expr(self):
        left = self.term()
        while self.tok.kind == "op" and self.tok.text in "+-":
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self):
        left = self.unary()
        while self.tok.kind == "op" and self.tok.text in "*/":
            op = self.tok.text
            self.i += 1
            left = BinOp(op, left, self.unary())
        return left

    def unary(self):
        if self.accept("-"):
            return Neg(self.unary())
        return self.power()

    def power(self):
        base = self.atom()
        if self.accept("^"):
            return BinOp("^", base, self.unary())
        return base

    def atom(self):
        tok = self.tok
        if tok.kind == "num":
            self.i += 1
            return Num(float(tok.text))
        if tok.kind == "op" and tok.text == "(":
            self.i += 1
            e = self.expr()
            self.expect(")")
            return e
        if tok.kind == "ident":
            self.i += 1
            return self.identifier(tok)
        found = tok.text or "end of input"
        self.fail(f"unexpected {found!r}", _ATOM_START)

    def index(self, minimum):
        tok = self.tok
        if tok.kind != "num":
            self.fail("expected integer index", {"integer"})
        if not tok.text.isdigit():
            self.fail(f"malformed index {tok.text!r}", {"integer"}, code="MALFORMED_INDEX")
        value = int(tok.text)
        if value < minimum:
            self.fail(f"index {value} below {minimum}", {"integer"}, code="MALFORMED_INDEX")
        self.i += 1
        return value

    def identifier(self, tok):
        name = tok.text
        if self.tok.kind == "op" and self.tok.text == "(":
            if name not in FUNCTIONS:
                self.fail(f"unknown function {name!r}", set(FUNCTIONS), tok=tok,
                          code="UNKNOWN_FUNCTION")
            self.i += 1
            args = [self.expr()]
            while self.accept(","):
                args.append(self.expr())
            self.expect(")")
            if len(args) != FUNCTIONS[name]:
                self.fail(f"{name} takes {FUNCTIONS[name]} argument(s), got {len(args)}",
                          tok=tok, code="ARITY")
            return Call(name, tuple(args))
        if name in CONSTANTS:
            return Num(CONSTANTS[name])
        if name in SCALAR_VARS:
            return Var(name)
        if name in VECTOR_VARS:
            self.expect("[")
            j = self.index(0)
            self.expect("]")
            return Var(f"{name}[{j}]")
        if name in MATRIX_VARS:
            self.expect("[")
            i = self.index(1)
            self.expect("]")
            self.expect("[")
            j = self.index(0)
            self.expect("]")
            return Var(f"{name}[{i}][{j}]")
        self.fail(f"unknown identifier {name!r}",
                  set(SCALAR_VARS + VECTOR_VARS + MATRIX_VARS + tuple(CONSTANTS)), tok=tok,
                  code="UNKNOWN_IDENTIFIER")


def parse(source: str) -> Expr:
    if not source or not source.strip():
        raise ExprSyntaxError("empty expression", 0, _ATOM_START)
    return _Parser(source).parse()


# -- printing --------------------------------------------------------------

def _num_text(x: float) -> str:
    if math.isinf(x):
        s = "1e999"
    elif x != x:
        raise ValueError("NaN literal has no text form")
    else:
        s = repr(float(abs(x)))
    return f"(-{s})" if math.copysign(1.0, x) < 0 else s


def to_text(e: Expr) -> str:
    """Canonical, fully parenthesized serialization; ``parse(to_text(e)) == e``."""
    if isinstance(e, Num):
        return _num_text(e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, Neg):
        return f"(-{to_text(e.operand)})"
    if isinstance(e, BinOp):
        return f"({to_text(e.left)} {e.op} {to_text(e.right)})"
    if isinstance(e, Call):
        return f"{e.func}({', '.join(to_text(a) for a in e.args)})"
    raise TypeError(f"not an expression: {e!r}")


# -- analysis --------------------------------------------------------------

def free_variables(e: Expr) -> frozenset:
    out = set()
    stack = [e]
    while stack:
        n = stack.pop()
        if isinstance(n, Var):
            out.add(n.name)
        elif isinstance(n, Neg):
            stack.append(n.operand)
        elif isinstance(n, BinOp):
            stack.extend((n.left, n.right))
        elif isinstance(n, Call):
            stack.extend(n.args)
    return frozenset(out)


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, Neg):
        return Neg(substitute(e.operand, mapping))
    if isinstance(e, BinOp):
        return BinOp(e.op, substitute(e.left, mapping), substitute(e.right, mapping))
    if isinstance(e, Call):
        return Call(e.func, tuple(substitute(a, mapping) for a in e.args))
    return e


# -- evaluation ------------------------------------------------------------

_BINARY = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _scalar.div,
    "^": _scalar.pow_,
}


def _eval(e, env):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Var):
        return float(env[e.name])
    try:
        if isinstance(e, Neg):
            return -_eval(e.operand, env)
        if isinstance(e, BinOp):
            return _BINARY[e.op](_eval(e.left, env), _eval(e.right, env))
        if len(e.args) == 1:
            return _scalar.UNARY[e.func](_eval(e.args[0], env))
        return _scalar.BINARY_FUNCS[e.func](_eval(e.args[0], env), _eval(e.args[1], env))
    except _scalar.Fault as f:
        raise EvalDomainError(_scalar.STATUS_TEXT[f.status], to_text(e)) from None


def evaluate(e: Expr, env: Env) -> float:
    missing = free_variables(e) - env.keys()
    if missing:
        raise UnboundVariableError(missing)
    return _eval(e, env)


def partial_fd(e: Expr, env: Env, var: str, delta: float) -> float:
    """Central difference ``(e(var+delta) - e(var-delta)) / (2 delta)``."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    if var not in env:
        raise UnboundVariableError([var])
    x = float(env[var])
    up = dict(env)
    up[var] = x + delta
    lo = dict(env)
    lo[var] = x - delta
    return (evaluate(e, up) - evaluate(e, lo)) / (2.0 * delta)


# -- light algebra (used by derivative exclusion) --------------------------

def _const(e):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Neg) and isinstance(e.operand, Num):
        return -e.operand.value
    return None


def _num(v: float) -> Expr:
    # negative literals are kept as Neg(Num) so the canonical text re-parses identically
    if math.copysign(1.0, v) < 0:
        return Neg(Num(-v))
    return Num(v)


def _is_num(e, value):
    return _const(e) == value


def simplify(e: Expr) -> Expr:
    """Constant folding plus the 0/1 identities; no reordering."""
    if isinstance(e, Neg):
        a = simplify(e.operand)
        c = _const(a)
        if c is not None:
            return _num(-c)
        if isinstance(a, Neg):
            return a.operand
        return Neg(a)
    if isinstance(e, Call):
        return Call(e.func, tuple(simplify(x) for x in e.args))
    if not isinstance(e, BinOp):
        return e
    a, b = simplify(e.left), simplify(e.right)
    op = e.op
    ca, cb = _const(a), _const(b)
    if ca is not None and cb is not None:
        try:
            return _num(_BINARY[op](ca, cb))
        except _scalar.Fault:
            return BinOp(op, a, b)
    if op == "+":
        if _is_num(a, 0.0):
            return b
        if _is_num(b, 0.0):
            return a
    elif op == "-":
        if _is_num(b, 0.0):
            return a
        if _is_num(a, 0.0):
            return simplify(Neg(b))
    elif op == "*":
        if _is_num(a, 0.0) or _is_num(b, 0.0):
            return Num(0.0)
        if _is_num(a, 1.0):
            return b
        if _is_num(b, 1.0):
            return a
    elif op == "/":
        if _is_num(b, 1.0):
            return a
        if _is_num(a, 0.0):
            return Num(0.0)
    elif op == "^":
        if _is_num(b, 1.0):
            return a
    return BinOp(op, a, b)


def constant_value(e: Expr):
    """Value of ``e`` after folding, or ``None`` if it still has free variables."""
    return _const(simplify(e))


def affine_split(e: Expr, var: str):
    """Return ``(coef, rest)`` with ``e == coef*var + rest`` structurally, or
    ``None`` when ``e`` is not affine in ``var``."""
    if var not in free_variables(e):
        return Num(0.0), e
    if isinstance(e, Var):
        return Num(1.0), Num(0.0)
    if isinstance(e, Neg):
        inner = affine_split(e.operand, var)
        if inner is None:
            return None
        return simplify(Neg(inner[0])), simplify(Neg(inner[1]))
    if isinstance(e, BinOp):
        if e.op in "+-":
            l, r = affine_split(e.left, var), affine_split(e.right, var)
            if l is None or r is None:
                return None
            return (simplify(BinOp(e.op, l[0], r[0])), simplify(BinOp(e.op, l[1], r[1])))
        left_has = var in free_variables(e.left)
        right_has = var in free_variables(e.right)
        if e.op == "*" and left_has != right_has:
            lin, other = (e.left, e.right) if left_has else (e.right, e.left)
            s = affine_split(lin, var)
            if s is None:
                return None
            return simplify(BinOp("*", s[0], other)), simplify(BinOp("*", s[1], other))
        if e.op == "/" and left_has and not right_has:
            s = affine_split(e.left, var)
            if s is None:
                return None
            return simplify(BinOp("/", s[0], e.right)), simplify(BinOp("/", s[1], e.right))
    return None


# -- compilation to stack programs -----------------------------------------

OP_CONST, OP_LOAD, OP_NEG, OP_ADD, OP_SUB, OP_MUL, OP_DIV, OP_POW = range(8)
OP_SIN, OP_COS, OP_EXP, OP_LOG, OP_TANH, OP_SQRT, OP_ABS, OP_MIN, OP_MAX = range(8, 17)

_BIN_OPCODE = {"+": OP_ADD, "-": OP_SUB, "*": OP_MUL, "/": OP_DIV, "^": OP_POW}
_FUNC_OPCODE = {"sin": OP_SIN, "cos": OP_COS, "exp": OP_EXP, "log": OP_LOG, "tanh": OP_TANH,
                "sqrt": OP_SQRT, "abs": OP_ABS, "min": OP_MIN, "max": OP_MAX}


def compile_postfix(e: Expr, slot_of: Mapping[str, int], consts: list):
    """Flatten ``e`` into postfix ``(opcode, arg, node)`` triples.

    Constants are appended to ``consts``; ``arg`` is a constant index for
    OP_CONST, a slot index for OP_LOAD and 0 otherwise.
    """
    out = []

    def walk(n):
        if isinstance(n, Num):
            consts.append(n.value)
            out.append((OP_CONST, len(consts) - 1, n))
        elif isinstance(n, Var):
            try:
                out.append((OP_LOAD, slot_of[n.name], n))
            except KeyError:
                raise UnboundVariableError([n.name]) from None
        elif isinstance(n, Neg):
            walk(n.operand)
            out.append((OP_NEG, 0, n))
        elif isinstance(n, BinOp):
            walk(n.left)
            walk(n.right)
            out.append((_BIN_OPCODE[n.op], 0, n))
        else:
            for a in n.args:
                walk(a)
            out.append((_FUNC_OPCODE[n.func], 0, n))

    walk(e)
    return out
