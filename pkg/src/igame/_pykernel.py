"""Pure-Python stack-machine kernel (fallback for ``_ckernel``).

Same interface and arithmetic as the compiled backend: methods return a
status code and leave fault details in ``fault_prog`` / ``fault_instr``.
"""

import math

from . import _scalar
from ._scalar import Fault, NON_FINITE_STATE, OK

NAME = "python"

_pow = _scalar.pow_
_div = _scalar.div
_exp = _scalar.exp
_log = _scalar.log
_sqrt = _scalar.sqrt
_sin = _scalar.sin
_cos = _scalar.cos
_tanh = math.tanh
_fabs = math.fabs
_isfinite = math.isfinite


def _exec(prog, s):
    st = []
    push = st.append
    pop = st.pop
    pc = 0
    try:
        for pc, (op, a) in enumerate(prog):
            if op == 1:
                push(s[a])
            elif op == 0:
                push(a)
            elif op == 3:
                b = pop()
                st[-1] = st[-1] + b
            elif op == 5:
                b = pop()
                st[-1] = st[-1] * b
            elif op == 4:
                b = pop()
                st[-1] = st[-1] - b
            elif op == 2:
                st[-1] = -st[-1]
            elif op == 6:
                b = pop()
                st[-1] = _div(st[-1], b)
            elif op == 7:
                b = pop()
                st[-1] = _pow(st[-1], b)
            elif op == 8:
                st[-1] = _sin(st[-1])
            elif op == 9:
                st[-1] = _cos(st[-1])
            elif op == 10:
                st[-1] = _exp(st[-1])
            elif op == 11:
                st[-1] = _log(st[-1])
            elif op == 12:
                st[-1] = _tanh(st[-1])
            elif op == 13:
                st[-1] = _sqrt(st[-1])
            elif op == 14:
                st[-1] = _fabs(st[-1])
            elif op == 15:
                b = pop()
                x = st[-1]
                st[-1] = b if b < x else x
            elif op == 16:
                b = pop()
                x = st[-1]
                st[-1] = b if b > x else x
    except Fault as f:
        f.pc = pc
        raise
    return st[0]


class Block:
    def __init__(self, code, arg, consts, starts, targets, max_depth):
        code = [int(c) for c in code]
        arg = [int(a) for a in arg]
        consts = [float(c) for c in consts]
        starts = [int(s) for s in starts]
        self.starts = starts
        self.targets = [int(t) for t in targets]
        self.progs = []
        for p in range(len(starts) - 1):
            prog = []
            for k in range(starts[p], starts[p + 1]):
                a = consts[arg[k]] if code[k] == 0 else arg[k]
                prog.append((code[k], a))
            self.progs.append(prog)
        self.fault_prog = -1
        self.fault_instr = -1
        self.last_value = 0.0
        self.steps_done = 0

    def _fault(self, p, f):
        self.fault_prog = p
        self.fault_instr = self.starts[p] + f.pc
        return f.status

    def _run_list(self, s):
        for p, prog in enumerate(self.progs):
            try:
                v = _exec(prog, s)
            except Fault as f:
                return self._fault(p, f)
            t = self.targets[p]
            if t >= 0:
                s[t] = v
        return OK

    def run(self, slots):
        s = slots.tolist()
        status = self._run_list(s)
        slots[:] = s
        return status

    def eval1(self, slots, i):
        try:
            self.last_value = _exec(self.progs[i], slots.tolist())
        except Fault as f:
            return self._fault(i, f)
        return OK

    def eval_rows(self, rows, i, out):
        prog = self.progs[i]
        for r, row in enumerate(rows.tolist()):
            try:
                out[r] = _exec(prog, row)
            except Fault as f:
                self.steps_done = r
                return self._fault(i, f)
        self.steps_done = len(rows)
        return OK

    def rollout(self, slots, nsteps, k_offset, t0, h, t_slot, phi_slots, next_slots,
                dphi_slots, in_slots, in_values, rec_slots, out):
        s = slots.tolist()
        phi_slots = list(phi_slots)
        next_slots = list(next_slots)
        dphi_slots = list(dphi_slots)
        in_slots = list(in_slots)
        rec_slots = list(rec_slots)
        inputs = in_values.tolist() if len(in_slots) else None
        rows = []
        status = OK
        self.steps_done = 0
        for k in range(nsteps + 1):
            s[t_slot] = t0 + (k_offset + k) * h
            if inputs is not None:
                for m, slot in enumerate(in_slots):
                    s[slot] = inputs[k][m]
            status = self._run_list(s)
            if status != OK:
                break
            rows.append([s[r] for r in rec_slots])
            self.steps_done = k + 1
            if k == nsteps:
                break
            nxt = [s[j] for j in next_slots]
            if not all(_isfinite(x) for x in nxt):
                self.fault_prog = -1
                self.fault_instr = -1
                status = NON_FINITE_STATE
                break
            for j, x in enumerate(nxt):
                p = phi_slots[j]
                s[dphi_slots[j]] = (x - s[p]) / h
                s[p] = x
        if rows:
            out[:len(rows)] = rows
        slots[:] = s
        return status
