"""Backend selection and the ``Block`` wrapper around the stack-machine kernels.

A block is an ordered list of compiled expressions, each optionally assigned
to a slot of a flat ``float64`` state vector.  The compiled backend
(``_ckernel``) is used when it imported successfully; otherwise the pure
Python ``_pykernel`` runs the same programs with identical arithmetic.
"""

from __future__ import annotations

import contextlib
from typing import Mapping, Sequence

import numpy as np

from . import _pykernel, _scalar
from .errors import EvalDomainError, NumericError
from .exprlang import Expr, compile_postfix, to_text

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_BACKENDS = {"python": _pykernel}
if _ckernel is not None:
    _BACKENDS["cython"] = _ckernel

_active = _ckernel if _ckernel is not None else _pykernel


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def backend_name() -> str:
    return _active.NAME


def set_backend(name: str) -> None:
    global _active
    try:
        _active = _BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}") from None


@contextlib.contextmanager
def using(name: str):
    prev = _active.NAME
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def _stack_depth(code) -> int:
    depth = best = 0
    for op, _, _ in code:
        if op in (0, 1):
            depth += 1
        elif op in (3, 4, 5, 6, 7, 15, 16):
            depth -= 1
        best = max(best, depth)
    return best


class Block:
    """Ordered assignments ``slots[target] = expr(slots)``; target -1 means evaluate only."""

    def __init__(self, exprs: Sequence[Expr], targets: Sequence[int], slot_of: Mapping[str, int],
                 backend: str | None = None):
        if len(exprs) != len(targets):
            raise ValueError("exprs and targets differ in length")
        self.exprs = tuple(exprs)
        consts: list[float] = []
        code, arg, nodes, starts = [], [], [], [0]
        depth = 1
        for e in self.exprs:
            prog = compile_postfix(e, slot_of, consts)
            depth = max(depth, _stack_depth(prog))
            for op, a, node in prog:
                code.append(op)
                arg.append(a)
                nodes.append(node)
            starts.append(len(code))
        self._nodes = nodes
        mod = _active if backend is None else _BACKENDS[backend]
        self.backend = mod.NAME
        self._impl = mod.Block(np.asarray(code, dtype=np.intc), np.asarray(arg, dtype=np.intc),
                               np.asarray(consts, dtype=np.float64),
                               np.asarray(starts, dtype=np.intc),
                               np.asarray(targets, dtype=np.intc), depth)

    def __len__(self):
        return len(self.exprs)

    def error(self, status: int) -> NumericError:
        if status == _scalar.NON_FINITE_STATE:
            return NumericError("state became non-finite", "NON_FINITE_STATE")
        node = self._nodes[self._impl.fault_instr]
        return EvalDomainError(_scalar.STATUS_TEXT[status], to_text(node))

    def run(self, slots: np.ndarray) -> None:
        status = self._impl.run(slots)
        if status:
            raise self.error(status)

    def eval(self, slots: np.ndarray, i: int) -> float:
        status = self._impl.eval1(slots, i)
        if status:
            raise self.error(status)
        return self._impl.last_value

    def eval_rows(self, rows: np.ndarray, i: int) -> np.ndarray:
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        out = np.empty(rows.shape[0])
        status = self._impl.eval_rows(rows, i, out)
        if status:
            raise self.error(status)
        return out

    def rollout(self, slots: np.ndarray, nsteps: int, k_offset: int, t0: float, h: float,
                t_slot: int, phi_slots, next_slots, dphi_slots, in_slots, in_values,
                rec_slots):
        """Run the block and an explicit Euler update for ``nsteps`` steps.

        Returns ``(records, error)``; ``records`` holds the rows completed
        before ``error`` (``None`` on success).
        """
        ivec = lambda xs: np.asarray(xs, dtype=np.intc)  # noqa: E731
        in_slots = ivec(in_slots)
        if in_values is None:
            in_values = np.zeros((nsteps + 1, 0))
        in_values = np.ascontiguousarray(in_values, dtype=np.float64)
        rec_slots = ivec(rec_slots)
        out = np.zeros((nsteps + 1, len(rec_slots)))
        status = self._impl.rollout(slots, int(nsteps), int(k_offset), float(t0), float(h),
                                    int(t_slot), ivec(phi_slots), ivec(next_slots),
                                    ivec(dphi_slots), in_slots, in_values, rec_slots, out)
        rows = self._impl.steps_done
        return out[:rows], (self.error(status) if status else None)
