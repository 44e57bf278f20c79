"""Beltrami coefficients and their piecewise-constant grid averages.

A Beltrami coefficient is a complex function mu on the plane with
sup |mu| <= kappa < 1.  Fields are evaluated in a vectorized way on arrays
of complex points.  ``average_field`` turns a field into a
:class:`PiecewiseField` holding one value per square cell of a
:class:`GridSpec`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

__all__ = [
    "GridSpec",
    "BeltramiField",
    "ZeroField",
    "ConstantField",
    "StripField",
    "BumpField",
    "FunctionField",
    "SampledField",
    "PiecewiseField",
    "AveragingTransform",
    "CAYLEY",
    "FieldError",
    "average_field",
    "cell_averages",
    "l1_distance",
    "load_field",
    "save_field",
    "quasiconformal_K",
]

# 4-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W


class FieldError(ValueError):
    """Raised for invalid Beltrami data (modulus >= 1, bad files, ...)."""


def quasiconformal_K(kappa: float) -> float:
    """Maximal dilatation (1 + kappa) / (1 - kappa)."""
    return (1.0 + kappa) / (1.0 - kappa)


@dataclass(frozen=True)
class GridSpec:
    """Square grid of ``m x m`` cells tiling ``origin + [-L, L]^2``.

    Cells are indexed ``(row, col)``; row counts upward in y and col
    rightward in x.  Lattice corners are indexed the same way with
    ``0 <= row, col <= m``.
    """

    half_width: float
    cells_per_side: int
    origin: complex = 0j

    def __post_init__(self) -> None:
        if not self.half_width > 0:
            raise FieldError("grid half width must be positive")
        if self.cells_per_side < 1:
            raise FieldError("grid needs at least one cell per side")

    @property
    def m(self) -> int:
        return self.cells_per_side

    @property
    def cell_side(self) -> float:
        return 2.0 * self.half_width / self.cells_per_side

    @property
    def x_min(self) -> float:
        return self.origin.real - self.half_width

    @property
    def y_min(self) -> float:
        return self.origin.imag - self.half_width

    def corner(self, row: int, col: int) -> complex:
        s = self.cell_side
        return complex(self.x_min + col * s, self.y_min + row * s)

    def corners(self) -> np.ndarray:
        """All lattice corners as an ``(m+1, m+1)`` array indexed [row, col]."""
        s = self.cell_side
        k = np.arange(self.m + 1)
        return (self.x_min + s * k)[None, :] + 1j * (self.y_min + s * k)[:, None]

    def cell_center(self, row: int, col: int) -> complex:
        return self.corner(row, col) + 0.5 * self.cell_side * (1 + 1j)

    def cell_bounds(self, row: int, col: int) -> tuple[float, float, float, float]:
        """``(x0, x1, y0, y1)`` of a cell."""
        z = self.corner(row, col)
        s = self.cell_side
        return z.real, z.real + s, z.imag, z.imag + s

    def locate(self, z) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Cell indices of points; returns ``(row, col, inside)`` arrays.

        Points on the upper/right outer boundary are assigned to the last
        cell so that the closed square is covered.
        """
        z = np.asarray(z, dtype=complex)
        s = self.cell_side
        u = (z.real - self.x_min) / s
        v = (z.imag - self.y_min) / s
        m = self.m
        inside = (u >= 0) & (u <= m) & (v >= 0) & (v <= m)
        col = np.clip(np.floor(u), 0, m - 1).astype(int)
        row = np.clip(np.floor(v), 0, m - 1).astype(int)
        return row, col, inside

    def contains(self, z) -> np.ndarray:
        return self.locate(z)[2]

    def to_json(self) -> dict:
        out = {"L": self.half_width, "m": self.cells_per_side}
        if self.origin != 0:
            out["origin"] = [self.origin.real, self.origin.imag]
        return out

    @classmethod
    def from_json(cls, data: dict) -> GridSpec:
        origin = data.get("origin", [0.0, 0.0])
        return cls(float(data["L"]), int(data["m"]), complex(origin[0], origin[1]))


class BeltramiField(Protocol):
    """Anything evaluable as a Beltrami coefficient."""

    kind: str
    sup_bound: float
    support_radius: float

    def __call__(self, z) -> np.ndarray: ...


class _FieldBase:
    kind = "abstract"
    sup_bound = 0.0
    support_radius = 0.0

    @property
    def quasiconformal_K(self) -> float:
        return quasiconformal_K(self.sup_bound)

    def derivatives(self, z):
        """``(mu, mu_x, mu_y, mu_xy)`` at z, or None if not available exactly."""
        return None


@dataclass(frozen=True)
class ZeroField(_FieldBase):
    kind = "zero"
    sup_bound = 0.0
    support_radius = 0.0

    def __call__(self, z) -> np.ndarray:
        return np.zeros(np.shape(z), dtype=complex)

    def derivatives(self, z):
        zero = np.zeros(np.shape(z), dtype=complex)
        return zero, zero, zero, zero


@dataclass(frozen=True)
class ConstantField(_FieldBase):
    value: complex
    kind = "constant"
    support_radius = math.inf

    def __post_init__(self) -> None:
        if abs(self.value) >= 1:
            raise FieldError("constant Beltrami coefficient must have modulus < 1")

    @property
    def sup_bound(self) -> float:  # type: ignore[override]
        return abs(self.value)

    def __call__(self, z) -> np.ndarray:
        return np.full(np.shape(z), complex(self.value))

    def derivatives(self, z):
        zero = np.zeros(np.shape(z), dtype=complex)
        return np.full(np.shape(z), complex(self.value)), zero, zero, zero


@dataclass(frozen=True)
class StripField(_FieldBase):
    """Vertical strips of width ``width``: 0 where floor(x/width) is even, kappa otherwise."""

    kappa: float
    width: float = 1.0
    kind = "strips"
    support_radius = math.inf

    def __post_init__(self) -> None:
        if not 0 <= self.kappa < 1:
            raise FieldError("strip amplitude must lie in [0, 1)")

    @property
    def sup_bound(self) -> float:  # type: ignore[override]
        return self.kappa

    def __call__(self, z) -> np.ndarray:
        x = np.real(np.asarray(z, dtype=complex))
        odd = np.mod(np.floor(x / self.width), 2) == 1
        return np.where(odd, self.kappa, 0.0).astype(complex)


def _bump_factor(t: np.ndarray):
    """(1 - t^2)^3 on [-1, 1], zero outside, with first and second derivatives."""
    inside = np.abs(t) < 1
    q = np.where(inside, 1.0 - t * t, 0.0)
    f = q**3
    df = -6.0 * t * q**2
    d2f = -6.0 * q**2 + 24.0 * t * t * q
    return f, np.where(inside, df, 0.0), np.where(inside, d2f, 0.0)


@dataclass(frozen=True)
class BumpField(_FieldBase):
    """Tensor-polynomial bump supported on the square ``center + [-R, R]^2``.

    ``mu = amplitude * P(u, v) * (1 - u^2)^3 (1 - v^2)^3`` with
    ``u = (x - cx)/R`` and ``v = (y - cy)/R``.  The profile P is 1 for
    ``"plain"`` and ``u*v`` for ``"mixed"``; the mixed profile has the
    jet ``amplitude/R^2 * (x - cx)(y - cy)`` at the center.  Inside the
    support the field is a polynomial of degree at most 7 in each
    variable, and it is C^2 across the support edge.
    """

    amplitude: complex
    center: complex = 0j
    radius: float = 1.0
    profile: str = "plain"
    kind = "bump"

    def __post_init__(self) -> None:
        if self.profile not in ("plain", "mixed"):
            raise FieldError(f"unknown bump profile {self.profile!r}")
        if not self.radius > 0:
            raise FieldError("bump radius must be positive")
        if self.sup_bound >= 1:
            raise FieldError("bump amplitude too large: sup |mu| >= 1")

    @property
    def sup_bound(self) -> float:  # type: ignore[override]
        if self.profile == "plain":
            return abs(self.amplitude)
        # max of |t| (1 - t^2)^3 is at t^2 = 1/7
        peak = math.sqrt(1 / 7) * (6 / 7) ** 3
        return abs(self.amplitude) * peak * peak

    @property
    def support_radius(self) -> float:  # type: ignore[override]
        return self.radius * math.sqrt(2.0)

    def _parts(self, z):
        z = np.asarray(z, dtype=complex)
        u = (z.real - self.center.real) / self.radius
        v = (z.imag - self.center.imag) / self.radius
        fu, dfu, d2fu = _bump_factor(u)
        fv, dfv, d2fv = _bump_factor(v)
        if self.profile == "plain":
            gu, dgu = fu, dfu
            gv, dgv = fv, dfv
        else:
            gu, dgu = u * fu, fu + u * dfu
            gv, dgv = v * fv, fv + v * dfv
            inside_u = np.abs(u) < 1
            inside_v = np.abs(v) < 1
            gu, dgu = np.where(inside_u, gu, 0.0), np.where(inside_u, dgu, 0.0)
            gv, dgv = np.where(inside_v, gv, 0.0), np.where(inside_v, dgv, 0.0)
        return gu, dgu, gv, dgv

    def __call__(self, z) -> np.ndarray:
        gu, _, gv, _ = self._parts(z)
        return self.amplitude * gu * gv

    def derivatives(self, z):
        gu, dgu, gv, dgv = self._parts(z)
        a = complex(self.amplitude)
        r = self.radius
        return a * gu * gv, a * dgu * gv / r, a * gu * dgv / r, a * dgu * dgv / (r * r)


@dataclass(frozen=True)
class FunctionField(_FieldBase):
    """Wrap a vectorized callable; derivatives are left to finite differences."""

    function: Callable[[np.ndarray], np.ndarray]
    sup_bound: float = 0.0
    support_radius: float = math.inf
    kind = "function"

    def __call__(self, z) -> np.ndarray:
        return np.asarray(self.function(np.asarray(z, dtype=complex)), dtype=complex)


@dataclass(frozen=True)
class SampledField(_FieldBase):
    """Field given by one sample per cell of a grid (piecewise constant)."""

    values: np.ndarray = field(repr=False)
    grid: GridSpec = None  # type: ignore[assignment]
    source: str | None = None
    kind = "sampled"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=complex)
        m = self.grid.cells_per_side
        if vals.shape != (m, m):
            raise FieldError(f"expected {m}x{m} samples, got shape {vals.shape}")
        if vals.size and np.max(np.abs(vals)) >= 1:
            raise FieldError("sample with modulus >= 1")
        object.__setattr__(self, "values", vals)

    @property
    def sup_bound(self) -> float:  # type: ignore[override]
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def support_radius(self) -> float:  # type: ignore[override]
        return self.grid.half_width * math.sqrt(2.0)

    def __call__(self, z) -> np.ndarray:
        row, col, inside = self.grid.locate(z)
        return np.where(inside, self.values[row, col], 0.0)


@dataclass(frozen=True)
class AveragingTransform:
    """A diffeomorphism nu of the unit disk onto a convex set, with its inverse."""

    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    name: str = "custom"


CAYLEY = AveragingTransform(
    forward=lambda mu: (1 + mu) / (1 - mu),
    inverse=lambda w: (w - 1) / (w + 1),
    name="cayley",
)


@dataclass(frozen=True)
class PiecewiseField:
    """Cell-constant Beltrami coefficient on a grid, zero outside."""

    grid: GridSpec
    cell_values: np.ndarray = field(repr=False)
    outside_value: complex = 0j

    def __post_init__(self) -> None:
        vals = np.asarray(self.cell_values, dtype=complex)
        m = self.grid.cells_per_side
        if vals.shape != (m, m):
            raise FieldError(f"expected {m}x{m} cell values, got shape {vals.shape}")
        if vals.size and np.max(np.abs(vals)) >= 1:
            raise FieldError("cell value with modulus >= 1")
        object.__setattr__(self, "cell_values", vals)

    @property
    def sup_bound(self) -> float:
        return float(np.max(np.abs(self.cell_values)))

    def __call__(self, z) -> np.ndarray:
        row, col, inside = self.grid.locate(z)
        return np.where(inside, self.cell_values[row, col], self.outside_value)

    def scaled(self, t: complex) -> PiecewiseField:
        return PiecewiseField(self.grid, t * self.cell_values)

    def support_inside(self) -> bool:
        """True when every boundary cell is exactly zero."""
        v = self.cell_values
        ring = np.concatenate([v[0], v[-1], v[:, 0], v[:, -1]])
        return bool(np.all(ring == 0))


def cell_averages(field_fn, x0, x1, y0, y1, transform: AveragingTransform | None = None):
    """Average of a field over rectangles with the 4x4 tensor Gauss rule.

    The bounds may be arrays (broadcast together); the result has their
    common shape.
    """
    x0, x1, y0, y1 = np.broadcast_arrays(*(np.asarray(b, dtype=float) for b in (x0, x1, y0, y1)))
    xs = x0[..., None, None] + (x1 - x0)[..., None, None] * _GL_X[:, None]
    ys = y0[..., None, None] + (y1 - y0)[..., None, None] * _GL_X[None, :]
    values = np.asarray(field_fn(xs + 1j * ys), dtype=complex)
    if transform is not None:
        values = transform.forward(values)
    mean = np.einsum("...ij,i,j->...", values, _GL_W, _GL_W)
    if transform is not None:
        mean = transform.inverse(mean)
    return mean


def average_field(field_, grid: GridSpec, transform: AveragingTransform | None = None) -> PiecewiseField:
    """Cellwise average of a Beltrami field on a grid.

    With a transform nu the cell value is ``nu^{-1}(mean(nu(mu)))``.
    Grid-sampled fields are passed through unchanged when their grid
    matches and rejected otherwise.
    """
    if isinstance(field_, SampledField):
        if field_.grid != grid:
            raise FieldError("grid-sampled field does not match the requested grid")
        return PiecewiseField(grid, field_.values.copy())
    if field_.sup_bound >= 1:
        raise FieldError("field sup bound must be < 1")
    m = grid.cells_per_side
    rows, cols = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
    s = grid.cell_side
    x0 = grid.x_min + cols * s
    y0 = grid.y_min + rows * s
    vals = cell_averages(field_, x0, x0 + s, y0, y0 + s, transform)
    if np.any(~np.isfinite(vals)) or np.max(np.abs(vals)) >= 1:
        raise FieldError("cell average has modulus >= 1 (inconsistent transform or samples)")
    return PiecewiseField(grid, vals)


def l1_distance(f1, f2, region: tuple[float, float, float, float], resolution: int = 200) -> float:
    """Midpoint Riemann-sum estimate of the L1 distance over ``(x0, x1, y0, y1)``."""
    x0, x1, y0, y1 = region
    hx = (x1 - x0) / resolution
    hy = (y1 - y0) / resolution
    xs = x0 + hx * (np.arange(resolution) + 0.5)
    ys = y0 + hy * (np.arange(resolution) + 0.5)
    z = xs[None, :] + 1j * ys[:, None]
    return float(np.sum(np.abs(np.asarray(f1(z)) - np.asarray(f2(z)))) * hx * hy)


def _values_from_json(data: dict) -> tuple[GridSpec, np.ndarray]:
    try:
        grid = GridSpec.from_json(data["grid"])
        raw = np.asarray(data["values"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise FieldError(f"malformed field file: {exc}") from exc
    m = grid.cells_per_side
    if raw.shape != (m * m, 2):
        raise FieldError(f"expected {m * m} [re, im] pairs, got array of shape {raw.shape}")
    values = (raw[:, 0] + 1j * raw[:, 1]).reshape(m, m)
    return grid, values


def load_field(path, format: str = "json") -> SampledField:
    """Read a grid-sampled field from the JSON exchange format."""
    if format != "json":
        raise FieldError(f"unsupported field format {format!r}")
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FieldError(f"cannot read field file {path}: {exc}") from exc
    grid, values = _values_from_json(data)
    return SampledField(values=values, grid=grid, source=str(path))


def field_to_json(pw: PiecewiseField | SampledField) -> dict:
    grid = pw.grid
    vals = pw.cell_values if isinstance(pw, PiecewiseField) else pw.values
    flat = np.asarray(vals, dtype=complex).reshape(-1)
    return {"grid": grid.to_json(), "values": [[float(v.real), float(v.imag)] for v in flat]}


def save_field(pw: PiecewiseField | SampledField, path) -> None:
    Path(path).write_text(json.dumps(field_to_json(pw), indent=1) + "\n", encoding="utf-8")
