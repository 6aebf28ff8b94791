"""Plain-Python reference computations, independent of the package internals."""

import math


def lin1_closed_form(t: float) -> float:
    # dphi/dt = 0.5 + 0.3 phi, phi(0) = 0
    return (0.5 / 0.3) * (math.exp(0.3 * t) - 1.0)


def lin1_euler(h: float, T: float, e1: float = 0.2, e2: float = 0.1) -> list:
    n = round(T / h)
    phi = [0.0]
    for _ in range(n):
        p = phi[-1]
        phi.append(p + h * ((1.0 + e1 * p) + (-0.5 + e2 * p)))
    return phi


def harmonic_energy(h: float, T: float) -> list:
    a, b = 1.0, 0.0
    out = [1.0]
    for _ in range(round(T / h)):
        a, b = a + h * b, b - h * a
        out.append(a * a + b * b)
    return out


def ridge_affine(xs, ys, lam):
    """Closed-form 2x2 ridge for y ~ a + b x."""
    n = len(xs)
    sx, sxx = sum(xs), sum(x * x for x in xs)
    sy, sxy = sum(ys), sum(x * y for x, y in zip(xs, ys))
    m00, m01, m11 = n + lam, sx, sxx + lam
    det = m00 * m11 - m01 * m01
    a = (m11 * sy - m01 * sxy) / det
    b = (m00 * sxy - m01 * sy) / det
    return a, b
