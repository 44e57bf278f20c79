"""Rational Christoffel symbols ``zeta(z) = sum res_k / (z - z_k)``.

The symbol of a similarity structure on the sphere is determined by its
finite poles and residues; the residue at infinity is implied by the
residue sum ``-2``.  This module evaluates symbols, changes coordinates,
computes the local normal form near a pole and differentiates sampled
smooth symbols.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .gluing import AffineMap

__all__ = [
    "ChristoffelSymbol",
    "Inversion",
    "INVERSION",
    "PoleProximityError",
    "UnsupportedResidueError",
    "NormalForm",
    "evaluate",
    "residue_sum_defect",
    "pullback",
    "n_operator",
    "normal_form_series",
    "normal_form_from_laurent",
    "curvature_form",
]


class PoleProximityError(ValueError):
    """Evaluation requested too close to a pole."""


class UnsupportedResidueError(ValueError):
    """Residue in {-1, -2, ...}: no power-series normal form."""


@dataclass(frozen=True)
class ChristoffelSymbol:
    """Finite poles with residues; ``infinity_residue`` defaults to ``-2 - sum(res)``."""

    positions: np.ndarray = field(repr=False)
    residues: np.ndarray = field(repr=False)
    infinity_residue: complex | None = None

    def __post_init__(self) -> None:
        pos = np.atleast_1d(np.asarray(self.positions, dtype=complex)).copy()
        res = np.atleast_1d(np.asarray(self.residues, dtype=complex)).copy()
        if pos.shape != res.shape or pos.ndim != 1:
            raise ValueError("positions and residues must be 1-d arrays of equal length")
        pos.setflags(write=False)
        res.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "residues", res)
        if self.infinity_residue is None:
            object.__setattr__(self, "infinity_residue", complex(-2 - res.sum()))
        else:
            object.__setattr__(self, "infinity_residue", complex(self.infinity_residue))

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls, infinity_residue: complex = -2) -> ChristoffelSymbol:
        return cls(np.zeros(0, complex), np.zeros(0, complex), infinity_residue)

    def active(self) -> ChristoffelSymbol:
        """Copy without zero-residue poles (they do not change zeta)."""
        keep = self.residues != 0
        return ChristoffelSymbol(self.positions[keep], self.residues[keep], self.infinity_residue)

    def without(self, indices) -> ChristoffelSymbol:
        keep = np.ones(len(self), bool)
        keep[list(indices)] = False
        return ChristoffelSymbol(self.positions[keep], self.residues[keep], self.infinity_residue)

    def with_positions(self, positions) -> ChristoffelSymbol:
        return ChristoffelSymbol(positions, self.residues, self.infinity_residue)

    def diameter(self) -> float:
        if len(self) < 2:
            return 1.0
        p = self.positions
        return float(max(np.ptp(p.real), np.ptp(p.imag), 1e-300))

    def __call__(self, z):
        return evaluate(self, z)

    def to_json(self) -> dict:
        return {
            "poles": [
                {"z": [float(z.real), float(z.imag)], "res": [float(r.real), float(r.imag)]}
                for z, r in zip(self.positions, self.residues)
            ],
            "res_inf": [self.infinity_residue.real, self.infinity_residue.imag],
        }

    @classmethod
    def from_json(cls, data) -> ChristoffelSymbol:
        poles = data["poles"] if isinstance(data, dict) else data
        pos = [complex(*p["z"]) for p in poles]
        res = [complex(*p["res"]) for p in poles]
        inf = complex(*data["res_inf"]) if isinstance(data, dict) and "res_inf" in data else None
        return cls(np.array(pos, complex), np.array(res, complex), inf)

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)


def evaluate(sym: ChristoffelSymbol, z):
    """Exact rational evaluation; raises near a pole."""
    z = np.asarray(z, dtype=complex)
    if len(sym) == 0:
        return np.zeros(z.shape, complex) if z.ndim else 0j
    diff = z[..., None] - sym.positions
    if np.any(np.abs(diff) <= 1e-14 * (1 + np.abs(z[..., None]))):
        raise PoleProximityError("evaluation point within 1e-14 of a pole")
    out = (sym.residues / diff).sum(axis=-1)
    return out if z.ndim else complex(out)


def residue_sum_defect(sym: ChristoffelSymbol) -> complex:
    """``sum(res) + res_inf + 2``; zero for a consistent sphere symbol."""
    return complex(sym.residues.sum() + sym.infinity_residue + 2)


@dataclass(frozen=True)
class Inversion:
    """The involution ``z -> 1/z``."""

    def __call__(self, z):
        return 1 / np.asarray(z, dtype=complex)


INVERSION = Inversion()


def pullback(sym: ChristoffelSymbol, psi) -> ChristoffelSymbol:
    """Symbol in the coordinate w with ``z = psi(w)``.

    Uses ``zeta2(w) = psi'(w) zeta1(psi(w)) + psi''(w)/psi'(w)``.  Residues
    are invariant under affine maps; under inversion the pole at 0 and
    the point at infinity exchange residues.
    """
    if isinstance(psi, AffineMap):
        if psi.a == 0:
            raise ValueError("degenerate affine map")
        return ChristoffelSymbol((sym.positions - psi.b) / psi.a, sym.residues, sym.infinity_residue)
    if isinstance(psi, Inversion):
        pos = sym.positions
        at_zero = pos == 0
        if np.count_nonzero(at_zero) > 1:
            raise ValueError("repeated pole at 0")
        res_zero = complex(sym.residues[at_zero].sum()) if at_zero.any() else None
        new_pos = 1 / pos[~at_zero]
        new_res = sym.residues[~at_zero]
        if sym.infinity_residue != 0:
            new_pos = np.append(new_pos, 0j)
            new_res = np.append(new_res, sym.infinity_residue)
        new_inf = res_zero if res_zero is not None else 0j
        return ChristoffelSymbol(new_pos, new_res, new_inf)
    raise TypeError("pullback supports AffineMap or Inversion")


def n_operator(phi: Callable, z: complex, step: float = 1e-4) -> complex:
    """Finite-difference estimate of ``phi''/phi'`` with 5-point stencils."""
    h = step
    f = [phi(z + k * h) for k in (-2, -1, 0, 1, 2)]
    d1 = (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    d2 = (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    if abs(d1) < 1e-300:
        raise ZeroDivisionError("phi'(z) vanishes")
    return complex(d2 / d1)


@dataclass(frozen=True)
class NormalForm:
    """Coordinate ``w(u) = u * sum_{n} coeffs[n] u^n`` with ``u = z - z0`` and ``coeffs[0] = 1``.

    In the coordinate w the symbol is exactly ``res / w`` near the pole,
    i.e. the similarity charts are ``w**alpha`` with ``alpha = res + 1``.
    """

    pole_index: int
    center: complex
    residue: complex
    alpha: complex
    coeffs: np.ndarray
    tail_magnitude: float

    def __call__(self, z):
        u = np.asarray(z, dtype=complex) - self.center
        return u * np.polynomial.polynomial.polyval(u, self.coeffs)

    def derivative(self, z):
        u = np.asarray(z, dtype=complex) - self.center
        n = np.arange(len(self.coeffs))
        return np.polynomial.polynomial.polyval(u, self.coeffs * (n + 1))


def _series_exp(a: np.ndarray) -> np.ndarray:
    """Power series exp(A) for A with A[0] = 0, truncated to len(a)."""
    n = len(a)
    out = np.zeros(n, complex)
    out[0] = 1.0
    # E' = A' E
    for k in range(1, n):
        out[k] = sum(j * a[j] * out[k - j] for j in range(1, k + 1)) / k
    return out


def _series_log(b: np.ndarray) -> np.ndarray:
    """Power series log(B) for B with B[0] = 1."""
    n = len(b)
    out = np.zeros(n, complex)
    # B L' = B'
    for k in range(1, n):
        out[k] = (k * b[k] - sum(j * out[j] * b[k - j] for j in range(1, k))) / k
    return out


def normal_form_from_laurent(residue: complex, regular: np.ndarray, order: int = 8,
                             center: complex = 0j, pole_index: int = -1) -> NormalForm:
    """Normal-form coordinate for ``zeta = res/u + sum_n regular[n] u^n``.

    ``exp(int zeta) = u^res * B(u)`` with ``B = exp(sum regular[n] u^(n+1)/(n+1))``;
    integrating gives ``phi = u^(res+1)/(res+1) * S(u)`` with
    ``S = sum b_n (res+1)/(res+n+1) u^n``, and ``w = u S(u)^(1/(res+1))``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    alpha = residue + 1
    if abs(alpha.imag) < 1e-14 and abs(alpha.real - round(alpha.real)) < 1e-14 and round(alpha.real) <= 0:
        raise UnsupportedResidueError("residue in {-1, -2, ...}")
    n = order + 1
    reg = np.zeros(n, complex)
    r = np.asarray(regular, dtype=complex)[: n - 1]
    # A(u) = sum regular[k] u^(k+1)/(k+1)
    reg[1 : len(r) + 1] = r / np.arange(1, len(r) + 1)
    b = _series_exp(reg)
    s = b * alpha / (alpha + np.arange(n))
    coeffs = _series_exp(_series_log(s) / alpha)
    return NormalForm(pole_index, center, complex(residue), complex(alpha), coeffs[:order],
                      float(abs(coeffs[order])))


def normal_form_series(sym: ChristoffelSymbol, pole_index: int, order: int = 8) -> NormalForm:
    """Normal form at a finite pole; other poles contribute the regular Taylor part."""
    z0 = sym.positions[pole_index]
    res = complex(sym.residues[pole_index])
    others = np.delete(np.arange(len(sym)), pole_index)
    d = sym.positions[others] - z0
    r = sym.residues[others]
    k = np.arange(order + 1)
    # 1/(u - d) = -sum u^k / d^(k+1)
    regular = -(r[:, None] / d[:, None] ** (k + 1)).sum(axis=0) if len(others) else np.zeros(order + 1)
    return normal_form_from_laurent(res, regular, order, z0, pole_index)


def curvature_form(values: np.ndarray, spacing: float | tuple[float, float]) -> np.ndarray:
    """Central-difference ``d zeta / d zbar`` of samples indexed ``[row (y), col (x)]``."""
    if np.isscalar(spacing):
        hx = hy = float(spacing)
    else:
        hx, hy = spacing
    values = np.asarray(values, dtype=complex)
    d_dy, d_dx = np.gradient(values, hy, hx, edge_order=2)
    return 0.5 * (d_dx + 1j * d_dy)
