# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled stack-machine kernel. Mirrors ``_pykernel`` operation for operation."""

from libc.math cimport pow, exp, log, sqrt, sin, cos, tanh, fabs, floor, isinf, isfinite, NAN
from libc.stdlib cimport malloc, free

NAME = "cython"

cdef enum:
    S_OK = 0
    S_DIV = 1
    S_LOG = 2
    S_SQRT = 3
    S_POW = 4
    S_NONFINITE = 5


cdef inline bint _nonint(double y) noexcept nogil:
    return y != y or (isfinite(y) and floor(y) != y)


cdef class Block:
    cdef int[::1] code
    cdef int[::1] arg
    cdef double[::1] consts
    cdef int[::1] starts
    cdef int[::1] targets
    cdef int nprog
    cdef double* stack
    cdef int depth
    cdef public int fault_prog
    cdef public int fault_instr
    cdef public double last_value
    cdef public int steps_done

    def __cinit__(self, code, arg, consts, starts, targets, int max_depth):
        self.depth = max_depth if max_depth > 0 else 1
        self.stack = <double*> malloc(self.depth * sizeof(double))
        if self.stack == NULL:
            raise MemoryError()

    def __init__(self, code, arg, consts, starts, targets, int max_depth):
        import numpy as np
        self.code = np.ascontiguousarray(code, dtype=np.intc)
        self.arg = np.ascontiguousarray(arg, dtype=np.intc)
        c = np.ascontiguousarray(consts, dtype=np.float64)
        if c.shape[0] == 0:
            c = np.zeros(1)
        self.consts = c
        self.starts = np.ascontiguousarray(starts, dtype=np.intc)
        self.targets = np.ascontiguousarray(targets, dtype=np.intc)
        self.nprog = self.starts.shape[0] - 1
        self.fault_prog = -1
        self.fault_instr = -1
        self.last_value = 0.0
        self.steps_done = 0

    def __dealloc__(self):
        free(self.stack)

    cdef int _exec(self, int p, double* s, double* result) noexcept nogil:
        cdef int k, op, sp = -1
        cdef double a, b
        cdef double* st = self.stack
        for k in range(self.starts[p], self.starts[p + 1]):
            op = self.code[k]
            if op == 1:
                sp += 1
                st[sp] = s[self.arg[k]]
            elif op == 0:
                sp += 1
                st[sp] = self.consts[self.arg[k]]
            elif op == 3:
                sp -= 1
                st[sp] = st[sp] + st[sp + 1]
            elif op == 5:
                sp -= 1
                st[sp] = st[sp] * st[sp + 1]
            elif op == 4:
                sp -= 1
                st[sp] = st[sp] - st[sp + 1]
            elif op == 2:
                st[sp] = -st[sp]
            elif op == 6:
                sp -= 1
                b = st[sp + 1]
                if b == 0.0:
                    self.fault_prog = p
                    self.fault_instr = k
                    return S_DIV
                st[sp] = st[sp] / b
            elif op == 7:
                sp -= 1
                a = st[sp]
                b = st[sp + 1]
                if (a < 0.0 and _nonint(b)) or (a == 0.0 and b < 0.0):
                    self.fault_prog = p
                    self.fault_instr = k
                    return S_POW
                st[sp] = pow(a, b)
            elif op == 8:
                st[sp] = NAN if isinf(st[sp]) else sin(st[sp])
            elif op == 9:
                st[sp] = NAN if isinf(st[sp]) else cos(st[sp])
            elif op == 10:
                st[sp] = exp(st[sp])
            elif op == 11:
                if st[sp] <= 0.0:
                    self.fault_prog = p
                    self.fault_instr = k
                    return S_LOG
                st[sp] = log(st[sp])
            elif op == 12:
                st[sp] = tanh(st[sp])
            elif op == 13:
                if st[sp] < 0.0:
                    self.fault_prog = p
                    self.fault_instr = k
                    return S_SQRT
                st[sp] = sqrt(st[sp])
            elif op == 14:
                st[sp] = fabs(st[sp])
            elif op == 15:
                sp -= 1
                b = st[sp + 1]
                if b < st[sp]:
                    st[sp] = b
            elif op == 16:
                sp -= 1
                b = st[sp + 1]
                if b > st[sp]:
                    st[sp] = b
        result[0] = st[0]
        return S_OK

    cdef int _run(self, double* s) noexcept nogil:
        cdef int p, status, t
        cdef double v
        for p in range(self.nprog):
            status = self._exec(p, s, &v)
            if status != S_OK:
                return status
            t = self.targets[p]
            if t >= 0:
                s[t] = v
        return S_OK

    def run(self, double[::1] slots):
        cdef int status
        with nogil:
            status = self._run(&slots[0])
        return status

    def eval1(self, double[::1] slots, int i):
        cdef double v = 0.0
        cdef int status
        with nogil:
            status = self._exec(i, &slots[0], &v)
        self.last_value = v
        return status

    def eval_rows(self, double[:, ::1] rows, int i, double[::1] out):
        cdef Py_ssize_t r, n = rows.shape[0]
        cdef int status = S_OK
        cdef double v
        with nogil:
            for r in range(n):
                status = self._exec(i, &rows[r, 0], &v)
                if status != S_OK:
                    break
                out[r] = v
        self.steps_done = r if status != S_OK else n
        return status

    def rollout(self, double[::1] slots, int nsteps, int k_offset, double t0, double h,
                int t_slot, int[::1] phi_slots, int[::1] next_slots, int[::1] dphi_slots,
                int[::1] in_slots, double[:, ::1] in_values, int[::1] rec_slots,
                double[:, ::1] out):
        cdef int k, m, j, status = S_OK
        cdef int nphi = phi_slots.shape[0]
        cdef int nin = in_slots.shape[0]
        cdef int nrec = rec_slots.shape[0]
        cdef double* s = &slots[0]
        cdef double x
        cdef bint finite
        self.steps_done = 0
        with nogil:
            for k in range(nsteps + 1):
                s[t_slot] = t0 + (k_offset + k) * h
                for m in range(nin):
                    s[in_slots[m]] = in_values[k, m]
                status = self._run(s)
                if status != S_OK:
                    break
                for m in range(nrec):
                    out[k, m] = s[rec_slots[m]]
                self.steps_done = k + 1
                if k == nsteps:
                    break
                finite = True
                for j in range(nphi):
                    if not isfinite(s[next_slots[j]]):
                        finite = False
                if not finite:
                    self.fault_prog = -1
                    self.fault_instr = -1
                    status = S_NONFINITE
                    break
                for j in range(nphi):
                    x = s[next_slots[j]]
                    s[dphi_slots[j]] = (x - s[phi_slots[j]]) / h
                    s[phi_slots[j]] = x
        return status
