"""Slow, independent reference computations for cross-checking the main path.

Nothing here imports the numerical routines it is meant to check; each
function uses the most direct formula available.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "OracleReport",
    "oracle_quadrature_transport",
    "oracle_residue_recovery",
    "oracle_quadrant_model",
    "oracle_quadrant_loop_factor",
    "oracle_strip_solution",
    "strip_constants",
    "oracle_cell_average",
    "oracle_area_integral",
]


@dataclass(frozen=True)
class OracleReport:
    quantity: str
    oracle: complex
    main: complex

    @property
    def abs_defect(self) -> float:
        return abs(self.main - self.oracle)

    @property
    def rel_defect(self) -> float:
        return self.abs_defect / max(abs(self.oracle), 1e-300)


def _zeta(positions, residues, z):
    return sum(r / (z - p) for p, r in zip(positions, residues))


def oracle_quadrature_transport(sym, path, panels: int = 10000) -> complex:
    """Composite Simpson rule for the integral of zeta along each path segment."""
    if panels % 2:
        panels += 1
    pos = list(complex(p) for p in sym.positions)
    res = list(complex(r) for r in sym.residues)
    verts = [complex(v) for v in path.vertices]
    total = 0j
    t = np.linspace(0.0, 1.0, panels + 1)
    w = np.ones(panels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    for a, b in zip(verts, verts[1:]):
        z = a + t * (b - a)
        f = np.zeros_like(z)
        for p, r in zip(pos, res):
            f = f + r / (z - p)
        total += (b - a) * (w @ f) / (3.0 * panels)
    return complex(total)


def oracle_residue_recovery(sym, pole_index: int, radius: float, samples: int = 64) -> complex:
    """``(1/2 pi i) * contour integral of zeta`` on a circle, trapezoidal rule."""
    pos = [complex(p) for p in sym.positions]
    res = [complex(r) for r in sym.residues]
    c = pos[pole_index]
    for k, p in enumerate(pos):
        if k != pole_index and abs(p - c) <= radius * (1 + 1e-9):
            raise ValueError("recovery circle encloses or touches another pole")
    acc = 0j
    for j in range(samples):
        e = cmath.exp(2j * math.pi * j / samples)
        z = c + radius * e
        # dz = i r e dtheta
        acc += _zeta(pos, res, z) * 1j * radius * e
    return acc * (2 * math.pi / samples) / (2j * math.pi)


_RAYS = (1j, -1.0 + 0j, -1j)  # shared rays between quadrants 0|1, 1|2, 2|3


def _quadrant(z: complex) -> int:
    ang = math.atan2(z.imag, z.real) % (2 * math.pi)
    return min(int(ang // (math.pi / 2)), 3)


def _quadrant_log_gains(m) -> list:
    """Cumulative ``log g_k`` making ``g_k (z + m_k conj z)`` continuous across rays."""
    logs = [0j]
    for k, e in enumerate(_RAYS):
        q = e.conjugate() / e
        logs.append(logs[-1] + cmath.log(1 + m[k] * q) - cmath.log(1 + m[k + 1] * q))
    return logs


def oracle_quadrant_model(m0: complex, m1: complex, m2: complex, m3: complex, z: complex) -> complex:
    """Explicit straightening of four quadrant-constant Beltrami coefficients.

    Quadrant k (anticlockwise from the positive real axis) is mapped by
    ``g_k (z + m_k conj z)``; the resulting multivalued map D has loop
    factor tau, and ``Phi = D ** (2 pi i / (2 pi i + log tau))`` closes up.
    """
    m = [complex(m0), complex(m1), complex(m2), complex(m3)]
    z = complex(z)
    if z == 0:
        raise ValueError("the model map is evaluated away from the corner")
    logs = _quadrant_log_gains(m)
    # closing across the positive real axis
    log_tau = logs[3] + cmath.log(1 + m[3]) - cmath.log(1 + m[0])
    alpha = 2j * math.pi / (2j * math.pi + log_tau)
    k = _quadrant(z)
    ang = math.atan2(z.imag, z.real) % (2 * math.pi)
    log_d = logs[k] + math.log(abs(z)) + 1j * ang + cmath.log(1 + m[k] * z.conjugate() / z)
    return cmath.exp(alpha * log_d)


def oracle_quadrant_loop_factor(m0, m1, m2, m3, samples: int = 4096) -> complex:
    """Loop factor of the unclosed model map D, by phase unwrapping on the unit circle."""
    m = [complex(m0), complex(m1), complex(m2), complex(m3)]
    g = [1 + 0j]
    for k, e in enumerate(_RAYS):
        g.append(g[-1] * (e + m[k] * e.conjugate()) / (e + m[k + 1] * e.conjugate()))
    theta = 2 * math.pi * np.arange(samples + 1) / samples
    z = np.exp(1j * theta)
    k = np.minimum(theta // (math.pi / 2), 3).astype(int)
    # the last sample is the starting point again, reached through quadrant 3
    m_arr = np.array(m)
    g_arr = np.array(g)
    d = g_arr[k] * (z + m_arr[k] * np.conj(z))
    phase = np.unwrap(np.angle(d))
    log_ratio = math.log(abs(d[-1]) / abs(d[0])) + 1j * (phase[-1] - phase[0])
    return cmath.exp(log_ratio - 2j * math.pi)


def oracle_strip_solution(kappa: float, point: complex, width: float = 1.0) -> complex:
    """``f(x + iy) = g(x) + iy`` with ``g' = 1`` on even strips and K on odd strips; g(0) = 0."""
    big_k = (1 + kappa) / (1 - kappa)
    x = complex(point).real / width
    n = math.floor(x)
    # odd strips in [0, n): n // 2 of them for n >= 0, handled symmetrically for n < 0
    full_odd = n // 2 if n >= 0 else -((-n + 1) // 2)
    g = x + (big_k - 1) * full_odd
    if n % 2:
        g += (big_k - 1) * (x - n)
    return complex(g * width, complex(point).imag)


def strip_constants(kappa: float) -> dict:
    """Fine-scale dilatation K, coarse slope K' and dilatation K'' of the averaged coefficient."""
    big_k = (1 + kappa) / (1 - kappa)
    mean_mu = kappa / 2
    return {
        "K": big_k,
        "K_prime": (1 + big_k) / 2,
        "K_double_prime": (1 + mean_mu) / (1 - mean_mu),
    }


def oracle_cell_average(func, x0: float, x1: float, y0: float, y1: float,
                        refine: int = 8, order: int = 8) -> complex:
    """Mean of ``func(z)`` on a rectangle: ``refine^2`` sub-rectangles, ``order^2`` Gauss points each."""
    xg, wg = np.polynomial.legendre.leggauss(order)
    total = 0j
    hx = (x1 - x0) / refine
    hy = (y1 - y0) / refine
    for i in range(refine):
        for j in range(refine):
            cx = x0 + (i + 0.5) * hx
            cy = y0 + (j + 0.5) * hy
            for a, wa in zip(xg, wg):
                for b, wb in zip(xg, wg):
                    total += wa * wb * func(complex(cx + 0.5 * hx * a, cy + 0.5 * hy * b))
    return total / (4 * refine * refine)


def oracle_area_integral(func, x0: float, x1: float, y0: float, y1: float, n: int = 400) -> complex:
    """Midpoint rule for the integral of ``func`` over a rectangle."""
    xs = x0 + (np.arange(n) + 0.5) * (x1 - x0) / n
    ys = y0 + (np.arange(n) + 0.5) * (y1 - y0) / n
    zz = xs[None, :] + 1j * ys[:, None]
    vals = np.vectorize(func, otypes=[complex])(zz)
    return complex(vals.sum() * (x1 - x0) * (y1 - y0) / (n * n))
