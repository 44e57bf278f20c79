"""Limit objects of grid refinement: residue densities, atomic measures and the limit connection.

As the grid is refined, the corner residues of the glued structure form
atomic measures whose weak limit has a density computed from the second
jet of mu.  The limit similarity structure has the Cauchy transform of
the pushed-forward density as its symbol, which can also be read off
the frame fields ``A = f_* e1`` and ``B = f_* e2`` of the straightening.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .christoffel import ChristoffelSymbol
from .fields import GridSpec, cell_averages
from .gluing import corner_monodromy
from .transport import PolylinePath, segment_log_integral
from .uniformize import StraighteningMap, evaluate_straightening

__all__ = [
    "InsufficientDataError",
    "limit_density",
    "residue_density",
    "LambdaRow",
    "lambda_expansion_check",
    "AtomicMeasure",
    "atomic_measure",
    "DensitySamples",
    "density_samples",
    "weak_pairing",
    "TruncatedSymbol",
    "truncated_symbol",
    "LimitConnection",
    "limit_connection",
    "limit_symbol",
    "frame_connection",
    "invert_map",
    "TransportRow",
    "nudged_segment",
    "transport_limit_compare",
]

_GL4_X, _GL4_W = np.polynomial.legendre.leggauss(4)
_GL8_X, _GL8_W = np.polynomial.legendre.leggauss(8)


class InsufficientDataError(ValueError):
    """The sampled density does not cover the requested evaluation point."""


def _jet(field_, c: complex, scale: float = 1.0):
    """``(mu, mu_x, mu_y, mu_xy)`` at c: exact if the field provides it, else 5-point differences."""
    exact = field_.derivatives(c) if hasattr(field_, "derivatives") else None
    if exact is not None:
        return tuple(complex(v) for v in exact)
    h = 1e-5 * scale
    k = np.array([-2, -1, 1, 2])
    wd = np.array([1, -8, 8, -1]) / (12 * h)
    mu = complex(field_(c))
    fx = np.array([complex(field_(c + j * h)) for j in k])
    fy = np.array([complex(field_(c + 1j * j * h)) for j in k])
    grid = np.array([[complex(field_(c + a * h + 1j * b * h)) for b in k] for a in k])
    return mu, complex(wd @ fx), complex(wd @ fy), complex(wd @ grid @ wd)


def limit_density(field_, c: complex, scale: float = 1.0) -> complex:
    """Density h of the weak limit of the corner-residue measures, from the 2-jet of mu at c."""
    mu, mx, my, mxy = _jet(field_, c, scale)
    one = 1 - mu * mu
    if abs(one) == 0 or abs(mu) >= 1:
        raise ValueError("|mu| must be < 1")
    return complex(-(2 * mxy / one + 4 * mu * mx * my / one**2) / (2 * math.pi))


def residue_density(field_, c: complex, scale: float = 1.0) -> complex:
    """Density of residue per unit area, ``-i h``: residues are ``log Lambda / (2 pi i)``."""
    return -1j * limit_density(field_, c, scale)


@dataclass(frozen=True)
class LambdaRow:
    eps: float
    log_factor: complex
    scaled: complex
    target: complex
    defect: float


def lambda_expansion_check(field_, c: complex, eps_list=(0.1, 0.05, 0.025)) -> list[LambdaRow]:
    """Compare ``log Lambda(c, eps) / eps^2`` with ``2 pi h(c)`` for shrinking corner squares."""
    target = 2 * math.pi * limit_density(field_, c)
    rows = []
    for e in eps_list:
        x, y = c.real, c.imag
        quads = [(x, x + e, y, y + e), (x - e, x, y, y + e), (x - e, x, y - e, y), (x, x + e, y - e, y)]
        m = [complex(cell_averages(field_, *q)) for q in quads]
        log_f = corner_monodromy(*m).log_factor
        scaled = log_f / (e * e)
        rows.append(LambdaRow(e, log_f, scaled, target, abs(scaled - target)))
    return rows


@dataclass(frozen=True)
class AtomicMeasure:
    locations: np.ndarray
    weights: np.ndarray
    kind: str = "source"

    @property
    def total_mass(self) -> float:
        return float(np.sum(np.abs(self.weights)))

    def __len__(self) -> int:
        return len(self.weights)


def atomic_measure(fmap: StraighteningMap, pushforward: bool = False) -> AtomicMeasure:
    """Residue atoms at the lattice corners, or at the solved poles when ``pushforward``."""
    res = np.asarray(fmap.symbol.residues)
    keep = res != 0
    if pushforward:
        loc = np.asarray(fmap.symbol.positions)
    else:
        loc = fmap.grid.corners().reshape(-1)
    return AtomicMeasure(loc[keep].copy(), res[keep].copy(), "pushforward" if pushforward else "source")


@dataclass(frozen=True)
class DensitySamples:
    """Quadrature nodes, weights (area elements) and density values."""

    points: np.ndarray
    weights: np.ndarray
    values: np.ndarray


def density_samples(density, grid: GridSpec) -> DensitySamples:
    """Sample ``density(z)`` at the 4x4 Gauss nodes of every grid cell."""
    m, s = grid.m, grid.cell_side
    xg = 0.5 * (_GL4_X + 1)
    wg = 0.5 * _GL4_W
    cols, rows = np.meshgrid(np.arange(m), np.arange(m))
    x = grid.x_min + (cols[..., None, None] + xg[:, None]) * s
    y = grid.y_min + (rows[..., None, None] + xg[None, :]) * s
    pts = (x + 1j * y).reshape(-1)
    w = np.broadcast_to(np.outer(wg, wg) * s * s, (m, m, 4, 4)).reshape(-1)
    vals = np.array([density(p) for p in pts], dtype=complex)
    return DensitySamples(pts, w.copy(), vals)


def weak_pairing(measure, test) -> complex:
    """Integral of a test function against atoms or a sampled density."""
    if isinstance(measure, AtomicMeasure):
        if len(measure) == 0:
            return 0j
        return complex(np.sum(measure.weights * np.asarray([test(z) for z in measure.locations])))
    vals = np.asarray([test(z) for z in measure.points], dtype=complex)
    return complex(np.sum(measure.weights * measure.values * vals))


@dataclass(frozen=True)
class TruncatedSymbol:
    symbol: ChristoffelSymbol
    base: ChristoffelSymbol
    removed: tuple[int, ...]
    cutoff: float
    start: complex
    end: complex


def truncated_symbol(sym: ChristoffelSymbol, start: complex, end: complex, cutoff: float) -> TruncatedSymbol:
    """Drop every pole within ``cutoff`` of either path endpoint."""
    if not cutoff > 0:
        raise ValueError("cutoff must be positive")
    pos = np.asarray(sym.positions)
    near = (np.abs(pos - start) <= cutoff) | (np.abs(pos - end) <= cutoff)
    removed = tuple(int(k) for k in np.flatnonzero(near))
    keep = ~near
    trimmed = ChristoffelSymbol(pos[keep], np.asarray(sym.residues)[keep])
    return TruncatedSymbol(trimmed, sym, removed, cutoff, complex(start), complex(end))


# ---------------------------------------------------------------- limit connection


@dataclass
class LimitConnection:
    """Pushforward of the residue density through a reference straightening.

    The density is sampled on a source lattice of ``n x n`` cells; node
    images are stored so the cell containing an image point can be
    located, and ``weights = rho(c) dA(c) = g dA(s)`` are the masses of
    the image cells.
    """

    region: tuple[float, float, float, float]
    n: int
    node_images: np.ndarray
    centers: np.ndarray
    center_images: np.ndarray
    density: np.ndarray
    jac_det: np.ndarray
    weights: np.ndarray
    rho: object = field(repr=False)
    edge_density: float = 0.0

    @property
    def g(self) -> np.ndarray:
        """Pushforward density at the image cell centers, ``rho / det Df``."""
        return self.density / self.jac_det

    @property
    def cell_size(self) -> tuple[float, float]:
        x0, x1, y0, y1 = self.region
        return (x1 - x0) / self.n, (y1 - y0) / self.n

    def __call__(self, z):
        return limit_symbol(self, z)


def _quad_area(q: np.ndarray) -> np.ndarray:
    """Signed area of quadrilaterals ``q[..., 4]`` listed anticlockwise."""
    a = q[..., 2] - q[..., 0]
    b = q[..., 3] - q[..., 1]
    return 0.5 * (np.conj(a) * b).imag


def limit_connection(fmap_or_f, field_, region=None, n: int = 48) -> LimitConnection:
    """Sample the pushforward residue density through ``f`` on an ``n x n`` source lattice.

    ``fmap_or_f`` is a solved map or any vectorized callable; ``region``
    defaults to the solved map's grid square.
    """
    f = fmap_or_f
    if isinstance(f, StraighteningMap):
        fmap = f
        f = lambda z: evaluate_straightening(fmap, z)  # noqa: E731
        if region is None:
            g = fmap.grid
            region = (g.x_min, g.x_min + 2 * g.half_width, g.y_min, g.y_min + 2 * g.half_width)
    if region is None:
        raise ValueError("region is required for a bare callable")
    x0, x1, y0, y1 = region
    xs = np.linspace(x0, x1, n + 1)
    ys = np.linspace(y0, y1, n + 1)
    nodes = xs[None, :] + 1j * ys[:, None]
    img = np.asarray(f(nodes), dtype=complex)
    hx, hy = (x1 - x0) / n, (y1 - y0) / n
    centers = (xs[:-1, None] + 0.5 * hx)[None, :, 0] + 1j * (ys[:-1] + 0.5 * hy)[:, None]
    quads = np.stack([img[:-1, :-1], img[:-1, 1:], img[1:, 1:], img[1:, :-1]], axis=-1)
    det = _quad_area(quads) / (hx * hy)
    center_img = quads.mean(axis=-1)
    rho = lambda z: residue_density(field_, z)  # noqa: E731
    dens = np.array([[rho(c) for c in row] for row in centers])
    rim = np.concatenate([nodes[0], nodes[-1], nodes[1:-1, 0], nodes[1:-1, -1]])
    edge = max(abs(rho(c)) for c in rim)
    return LimitConnection(tuple(region), n, img, centers, center_img, dens, det, dens * hx * hy, rho, edge)


def _locate_image_cell(conn: LimitConnection, z: complex):
    """(row, col, local coordinates) of the image cell containing z, or None."""
    img = conn.node_images
    n = conn.n
    q = np.stack([img[:-1, :-1], img[:-1, 1:], img[1:, 1:], img[1:, :-1]], axis=-1)
    inside = np.ones((n, n), bool)
    for k in range(4):
        a, b = q[..., k], q[..., (k + 1) % 4]
        inside &= (np.conj(b - a) * (z - a)).imag >= -1e-14 * np.abs(b - a)
    hits = np.argwhere(inside)
    if len(hits) == 0:
        return None
    r, c = hits[0]
    corners = q[r, c]
    # invert the bilinear interpolation of the corners by Newton
    u = np.array([0.5, 0.5])
    for _ in range(30):
        s, t = u
        val = (1 - s) * (1 - t) * corners[0] + s * (1 - t) * corners[1] + s * t * corners[2] + (1 - s) * t * corners[3]
        ds = -(1 - t) * corners[0] + (1 - t) * corners[1] + t * corners[2] - t * corners[3]
        dt = -(1 - s) * corners[0] - s * corners[1] + s * corners[2] + (1 - s) * corners[3]
        jac = np.array([[ds.real, dt.real], [ds.imag, dt.imag]])
        step = np.linalg.solve(jac, [(z - val).real, (z - val).imag])
        u = u + step
        if np.max(np.abs(step)) < 1e-15:
            break
    return int(r), int(c), np.clip(u, 0.0, 1.0), corners


def _near_cell(conn: LimitConnection, z: complex, r: int, c: int, st: np.ndarray, corners: np.ndarray) -> complex:
    """Polar quadrature about the preimage of z over one source cell.

    The image is the bilinear interpolation of the node images, so
    ``r / (z - F(c* + r e^{it}))`` is smooth in r and the 1/|s - z|
    singularity of the kernel disappears.
    """
    x0, _, y0, _ = conn.region
    hx, hy = conn.cell_size
    base = complex(x0 + c * hx, y0 + r * hy)
    src = [base, base + hx, base + hx + 1j * hy, base + 1j * hy]
    star = base + st[0] * hx + 1j * st[1] * hy

    def image(p):
        s = (p.real - base.real) / hx
        t = (p.imag - base.imag) / hy
        return ((1 - s) * (1 - t) * corners[0] + s * (1 - t) * corners[1]
                + s * t * corners[2] + (1 - s) * t * corners[3])

    tg = 0.5 * (_GL8_X + 1)
    wt = 0.5 * _GL8_W
    rg = 0.5 * (_GL4_X + 1)
    wr = 0.5 * _GL4_W
    total = 0j
    for k in range(4):
        a, b = src[k], src[(k + 1) % 4]
        th_a = np.angle(a - star)
        th_b = np.angle(b - star)
        span = (th_b - th_a) % (2 * math.pi)
        if span == 0 or abs(np.conj(a - star) * (b - star)) == 0:
            continue
        for tj, wtj in zip(tg, wt):
            th = th_a + span * tj
            e = np.exp(1j * th)
            # distance from star to the edge a-b along direction e
            d = b - a
            denom = (np.conj(e) * d).imag
            if denom == 0:
                continue
            rmax = (np.conj(a - star) * d).imag / denom
            rmax = abs(rmax)
            if rmax <= 1e-12 * (hx + hy):
                continue
            for ri, wri in zip(rg, wr):
                rr = rmax * ri
                p = star + rr * e
                kern = rr / (z - image(p))
                total += wtj * wri * span * rmax * conn.rho(p) * kern
    return complex(total)


def limit_symbol(conn: LimitConnection, z):
    """``zeta(z) = integral of g(s) / (z - s) dA(s)`` over the sampled image region."""
    arr = np.asarray(z, dtype=complex)
    if arr.ndim:
        return np.array([limit_symbol(conn, complex(v)) for v in arr.reshape(-1)]).reshape(arr.shape)
    z = complex(arr)
    loc = _locate_image_cell(conn, z)
    w = conn.weights
    s = conn.center_images
    if loc is None:
        # density on the region boundary means the support runs past the
        # sample, so an outside point cannot be placed relative to its hull
        if conn.edge_density > 1e-12 * max(np.max(np.abs(conn.density)), 1e-300):
            raise InsufficientDataError("evaluation point lies outside the sampled image region")
        return complex(np.sum(w / (z - s)))
    r, c, st, corners = loc
    mask = np.ones(w.shape, bool)
    mask[r, c] = False
    far = np.sum(w[mask] / (z - s[mask]))
    return complex(far + _near_cell(conn, z, r, c, st, corners))


# ---------------------------------------------------------------- frame connection


def invert_map(f, z: complex, seed: complex, tol: float = 1e-13, step: float = 1e-6, max_iter: int = 50) -> complex:
    """Solve ``f(c) = z`` for a real-differentiable map by Newton with a difference Jacobian."""
    c = complex(seed)
    for _ in range(max_iter):
        val = complex(f(c))
        res = z - val
        if abs(res) <= tol * (1 + abs(z)):
            return c
        fx = (complex(f(c + step)) - complex(f(c - step))) / (2 * step)
        fy = (complex(f(c + 1j * step)) - complex(f(c - 1j * step))) / (2 * step)
        jac = np.array([[fx.real, fy.real], [fx.imag, fy.imag]])
        if abs(np.linalg.det(jac)) < 1e-14:
            raise ValueError("Jacobian near-singular")
        d = np.linalg.solve(jac, [res.real, res.imag])
        c += complex(d[0], d[1])
    raise ValueError("map inversion did not converge")


def _frame_estimate(f, c: complex, h: float) -> complex:
    pts = {}

    def F(dx, dy):
        key = (dx, dy)
        if key not in pts:
            pts[key] = complex(f(c + h * complex(dx, dy)))
        return pts[key]

    fx = (F(1, 0) - F(-1, 0)) / (2 * h)
    fy = (F(0, 1) - F(0, -1)) / (2 * h)
    fxy = (F(1, 1) - F(1, -1) - F(-1, 1) + F(-1, -1)) / (4 * h * h)
    if abs(fx) == 0 or abs(fy) == 0 or abs((np.conj(fx) * fy).imag) < 1e-14 * abs(fx) * abs(fy):
        raise ValueError("Jacobian near-singular")
    return -fxy / (fx * fy)


def frame_connection(f, c: complex, step: float = 1e-2, richardson: bool = True) -> complex:
    """``-(d_A B) / (A B)`` at ``f(c)`` for the frame ``A = f_* e1``, ``B = f_* e2``.

    Moving along A in the image is moving along e1 at the source, so
    ``d_A B = f_xy`` and the connection is ``-f_xy / (f_x f_y)``.  The
    source point c is taken as input; use ``invert_map`` to start from
    an image point.  Central differences at step h and h/2 are combined
    by Richardson extrapolation.
    """
    d1 = _frame_estimate(f, c, step)
    if not richardson:
        return complex(d1)
    d2 = _frame_estimate(f, c, step / 2)
    return complex((4 * d2 - d1) / 3)


# ---------------------------------------------------------------- transport comparison


@dataclass(frozen=True)
class TransportRow:
    m: int
    removed: int
    discrete: complex
    limit: complex
    defect: float
    runtime_ms: float


def nudged_segment(sym: ChristoffelSymbol, a: complex, b: complex, clearance: float, shifts: int = 41) -> PolylinePath:
    """The segment a-b, translated perpendicularly by the smallest offset keeping ``clearance`` from the poles.

    Offsets are tried in order of size on a symmetric ladder up to
    ``clearance * shifts``; the endpoints move with the segment.
    """
    pos = np.asarray(sym.positions)[np.asarray(sym.residues) != 0]
    d = b - a
    normal = 1j * d / abs(d)
    ladder = sorted(range(-(shifts // 2), shifts // 2 + 1), key=lambda k: (abs(k), -k))
    best = None
    for k in ladder:
        off = k * clearance * 0.5 * normal
        p, q = a + off, b + off
        if len(pos) == 0:
            return PolylinePath([p, q])
        t = np.clip(((np.conj(d) * (pos - p)).real) / abs(d) ** 2, 0, 1)
        dist = np.min(np.abs(pos - (p + t * d)))
        if dist >= clearance:
            return PolylinePath([p, q])
        if best is None or dist > best[0]:
            best = (dist, PolylinePath([p, q]))
    return best[1]


def _path_integral(fn, path: PolylinePath, nodes: int = 48) -> complex:
    """Gauss-Legendre integral of fn along each segment."""
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (x + 1)
    w = 0.5 * w
    total = 0j
    v = path.vertices
    for a, b in zip(v, v[1:]):
        total += (b - a) * np.sum(w * np.asarray(fn(a + x * (b - a))))
    return complex(total)


def transport_limit_compare(maps, conn: LimitConnection, start: complex, end: complex,
                            cutoff: float | None = None, nodes: int = 48) -> list[TransportRow]:
    """Integral of the truncated discrete symbols against the limit symbol along a segment.

    ``maps`` is a sequence of solved (normalized) maps; the default cutoff
    is a twentieth of each map's cell side, and the path is nudged off
    the poles by a quarter of that.
    """
    limit_path = PolylinePath([start, end])
    limit_val = _path_integral(lambda z: limit_symbol(conn, z), limit_path, nodes)
    rows = []
    for fmap in maps:
        t0 = time.perf_counter()
        side = fmap.grid.cell_side * abs(fmap.post.a)
        r = cutoff if cutoff is not None else side / 20
        trunc = truncated_symbol(fmap.symbol, start, end, r)
        path = nudged_segment(trunc.symbol, start, end, side / 4)
        val = segment_log_integral(trunc.symbol, path).integral
        ms = 1e3 * (time.perf_counter() - t0)
        rows.append(TransportRow(fmap.grid.m, len(trunc.removed), complex(val), limit_val,
                                 abs(val - limit_val), ms))
    return rows
