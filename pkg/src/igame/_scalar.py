"""Scalar semantics shared by the tree-walking evaluator and the Python kernel.

The compiled kernel (``_ckernel.pyx``) mirrors these rules operation for
operation, so both backends produce bit-identical doubles.
"""

import math

OK = 0
DIV_ZERO = 1
LOG_DOMAIN = 2
SQRT_DOMAIN = 3
POW_DOMAIN = 4
NON_FINITE_STATE = 5

STATUS_TEXT = {
    DIV_ZERO: "division by zero",
    LOG_DOMAIN: "log of non-positive value",
    SQRT_DOMAIN: "sqrt of negative value",
    POW_DOMAIN: "power outside real domain",
    NON_FINITE_STATE: "non-finite state",
}

_INF = math.inf
_NAN = math.nan


class Fault(Exception):
    def __init__(self, status):
        self.status = status


def is_nonint(y):
    return y != y or (math.isfinite(y) and math.floor(y) != y)


def pow_(x, y):
    if x < 0.0 and is_nonint(y):
        raise Fault(POW_DOMAIN)
    if x == 0.0 and y < 0.0:
        raise Fault(POW_DOMAIN)
    try:
        return math.pow(x, y)
    except OverflowError:
        if x < 0.0 and math.fmod(y, 2.0) != 0.0:
            return -_INF
        return _INF


def div(x, y):
    if y == 0.0:
        raise Fault(DIV_ZERO)
    return x / y


def exp(x):
    try:
        return math.exp(x)
    except OverflowError:
        return _INF


def log(x):
    if x <= 0.0:
        raise Fault(LOG_DOMAIN)
    return math.log(x)


def sqrt(x):
    if x < 0.0:
        raise Fault(SQRT_DOMAIN)
    return math.sqrt(x)


def sin(x):
    if math.isinf(x):
        return _NAN
    return math.sin(x)


def cos(x):
    if math.isinf(x):
        return _NAN
    return math.cos(x)


def min_(a, b):
    return b if b < a else a


def max_(a, b):
    return b if b > a else a


UNARY = {
    "sin": sin,
    "cos": cos,
    "exp": exp,
    "log": log,
    "tanh": math.tanh,
    "sqrt": sqrt,
    "abs": math.fabs,
}
BINARY_FUNCS = {"min": min_, "max": max_}
