"""Polygon gluings, flags and vertex cycles.

A :class:`GluingComplex` is a set of planar polygons whose edges are
paired by complex-affine maps.  Walking from flag to flag around a glued
vertex produces a :class:`VertexCycle` carrying the total angle, the
dilation and the residue of the Christoffel symbol at that vertex.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import GridSpec, PiecewiseField

__all__ = [
    "AffineMap",
    "PlanarPolygon",
    "EdgePairing",
    "Flag",
    "VertexCycle",
    "GluingComplex",
    "GluingError",
    "build_grid_complex",
    "vertex_cycles",
    "residue_of_cycle",
    "corner_monodromy",
    "CornerMonodromy",
    "LocalModelChart",
    "local_model_chart",
    "triangle_fixture",
    "triangle_vertex_order",
    "TAU",
]

TAU = 2.0 * math.pi


class GluingError(ValueError):
    """Structural problem with a gluing (open cycle, degenerate polygon, ...)."""


@dataclass(frozen=True)
class AffineMap:
    """The complex-affine map ``z -> a z + b``."""

    a: complex = 1 + 0j
    b: complex = 0j

    def __call__(self, z):
        return self.a * z + self.b

    def inverse(self) -> AffineMap:
        if self.a == 0:
            raise GluingError("affine map is not invertible")
        return AffineMap(1 / self.a, -self.b / self.a)

    def compose(self, other: AffineMap) -> AffineMap:
        """``self o other``."""
        return AffineMap(self.a * other.a, self.a * other.b + self.b)

    @staticmethod
    def through(p0: complex, p1: complex, q0: complex, q1: complex) -> AffineMap:
        """The unique map sending p0 to q0 and p1 to q1."""
        a = (q1 - q0) / (p1 - p0)
        return AffineMap(a, q0 - a * p0)


@dataclass(frozen=True)
class PlanarPolygon:
    """Polygon with its interior on the left of the listed boundary.

    Edge ``k`` runs from vertex ``k`` to vertex ``k+1``.  For an unbounded
    polygon (the exterior of a grid) the listed boundary runs clockwise
    around the bounded complement.
    """

    id: int
    vertices: tuple[complex, ...]
    bounded: bool = True
    marked_points: tuple[complex, ...] = ()

    def __post_init__(self) -> None:
        if self.bounded and len(self.vertices) < 3:
            raise GluingError("bounded polygon needs at least 3 vertices")

    def __len__(self) -> int:
        return len(self.vertices)

    def edge(self, k: int) -> tuple[complex, complex]:
        n = len(self.vertices)
        return self.vertices[k % n], self.vertices[(k + 1) % n]

    def sector_angle(self, k: int) -> float:
        """Interior angle at vertex k, in (0, 2 pi]."""
        n = len(self.vertices)
        v = self.vertices[k % n]
        before = self.vertices[(k - 1) % n]
        after = self.vertices[(k + 1) % n]
        ang = cmath.phase((before - v) / (after - v))
        return ang if ang > 0 else ang + TAU


@dataclass(frozen=True)
class EdgePairing:
    """Pairs edge ``first`` with edge ``second``; ``gluing`` maps first onto second reversing orientation."""

    first: tuple[int, int]
    second: tuple[int, int]
    gluing: AffineMap

    def map_from(self, slot: tuple[int, int]) -> AffineMap:
        return self.gluing if slot == self.first else self.gluing.inverse()

    def partner(self, slot: tuple[int, int]) -> tuple[int, int]:
        return self.second if slot == self.first else self.first


@dataclass(frozen=True)
class Flag:
    """A polygon vertex; its "before" edge is the polygon edge leaving the vertex.

    Around the vertex, anticlockwise, one meets the before edge, the
    sector, then the after edge (the polygon edge arriving at the vertex).
    """

    polygon: int
    vertex: int

    @property
    def edge_before(self) -> int:
        return self.vertex

    def edge_after(self, n: int) -> int:
        return (self.vertex - 1) % n


@dataclass(frozen=True)
class VertexCycle:
    flags: tuple[Flag, ...]
    total_angle: float
    dilation: float
    residue: complex
    infinite: bool = False
    label: str = ""

    @property
    def signed_angle(self) -> float:
        return -self.total_angle if self.infinite else self.total_angle

    @property
    def monodromy_factor(self) -> complex:
        return self.dilation * cmath.exp(1j * self.signed_angle)


@dataclass
class GluingComplex:
    polygons: list[PlanarPolygon]
    pairings: list[EdgePairing]
    cycles: list[VertexCycle] = field(default_factory=list)
    corner_cycle: dict[tuple[int, int], int] = field(default_factory=dict)
    grid: GridSpec | None = None
    piecewise: PiecewiseField | None = None

    def pairing_of(self) -> dict[tuple[int, int], EdgePairing]:
        table: dict[tuple[int, int], EdgePairing] = {}
        for p in self.pairings:
            for slot in (p.first, p.second):
                if slot in table:
                    raise GluingError(f"edge slot {slot} paired twice")
                table[slot] = p
        return table

    def euler_characteristic(self) -> int:
        finite = [c for c in self.cycles if c.flags]
        return len(finite) - len(self.pairings) + len(self.polygons)

    def residues(self) -> np.ndarray:
        return np.array([c.residue for c in self.cycles if c.flags], dtype=complex)

    def to_json(self) -> dict:
        return {
            "polygons": [
                {
                    "id": p.id,
                    "bounded": p.bounded,
                    "vertices": [[v.real, v.imag] for v in p.vertices],
                }
                for p in self.polygons
            ],
            "pairings": [
                {
                    "first": list(p.first),
                    "second": list(p.second),
                    "a": [p.gluing.a.real, p.gluing.a.imag],
                    "b": [p.gluing.b.real, p.gluing.b.imag],
                }
                for p in self.pairings
            ],
            "cycles": [
                {
                    "label": c.label,
                    "theta": c.total_angle,
                    "lambda": c.dilation,
                    "res": [c.residue.real, c.residue.imag],
                    "infinite": c.infinite,
                    "flags": [[f.polygon, f.vertex] for f in c.flags],
                }
                for c in self.cycles
            ],
        }


def residue_of_cycle(total_angle: float, dilation: float, infinite: bool = False) -> complex:
    """Residue ``(log lambda + i sigma)/(2 pi i) - 1`` of a vertex cycle."""
    if not dilation > 0:
        raise GluingError("dilation must be positive")
    sigma = -total_angle if infinite else total_angle
    return (math.log(dilation) + 1j * sigma) / (TAU * 1j) - 1


def vertex_cycles(polygons: list[PlanarPolygon], pairings: list[EdgePairing]) -> list[VertexCycle]:
    """Enumerate the orbits of the flag successor map.

    The successor of a flag is reached through the gluing of its after
    edge, so cycles turn anticlockwise around the glued vertex.  Each
    cycle accumulates sector angles and the moduli of the gluing
    dilations; the dilation lambda is the inverse of their product.
    """
    table: dict[tuple[int, int], EdgePairing] = {}
    for p in pairings:
        for slot in (p.first, p.second):
            if slot in table:
                raise GluingError(f"edge slot {slot} paired twice")
            table[slot] = p
    by_id = {p.id: p for p in polygons}
    seen: set[Flag] = set()
    cycles: list[VertexCycle] = []
    for poly in polygons:
        for k in range(len(poly)):
            start = Flag(poly.id, k)
            if start in seen:
                continue
            flags = []
            angle = 0.0
            log_product = 0.0
            flag = start
            while True:
                if flag in seen:
                    raise GluingError("flag reached twice: inconsistent pairing")
                seen.add(flag)
                flags.append(flag)
                current = by_id[flag.polygon]
                angle += current.sector_angle(flag.vertex)
                slot = (flag.polygon, flag.edge_after(len(current)))
                if slot not in table:
                    raise GluingError(f"open cycle: edge {slot} is not paired")
                pairing = table[slot]
                log_product += math.log(abs(pairing.map_from(slot).a))
                target_poly, target_edge = pairing.partner(slot)
                flag = Flag(target_poly, target_edge)
                if flag == start:
                    break
            dilation = math.exp(-log_product)
            cycles.append(
                VertexCycle(
                    flags=tuple(flags),
                    total_angle=angle,
                    dilation=dilation,
                    residue=residue_of_cycle(angle, dilation),
                )
            )
    return cycles


def _chart(mu: complex):
    return lambda z: z + mu * np.conj(z)


def build_grid_complex(pw: PiecewiseField) -> GluingComplex:
    """Glue the parallelograms ``a_j(Q_j)``, ``a_j(z) = z + mu_j conj(z)``.

    Cell polygons get ids ``row * m + col``; the exterior of the grid is
    one unbounded polygon with id ``m*m`` glued by identities.  The vertex
    at infinity is appended as a regular point with residue -2.
    """
    grid = pw.grid
    m = grid.cells_per_side
    vals = pw.cell_values
    if np.any(np.abs(vals) >= 1 - 1e-15):
        raise GluingError("degenerate parallelogram: |mu| = 1")
    corners = grid.corners()
    polygons: list[PlanarPolygon] = []
    for r in range(m):
        for c in range(m):
            a = _chart(vals[r, c])
            quad = (corners[r, c], corners[r, c + 1], corners[r + 1, c + 1], corners[r + 1, c])
            polygons.append(PlanarPolygon(r * m + c, tuple(complex(a(q)) for q in quad)))

    # exterior boundary, clockwise around the square, starting at the lower-left corner
    ring: list[tuple[int, int]] = []
    ring += [(k, 0) for k in range(0, m)]  # up the left side
    ring += [(m, k) for k in range(0, m)]  # right along the top
    ring += [(m - k, m) for k in range(0, m)]  # down the right side
    ring += [(0, m - k) for k in range(0, m)]  # left along the bottom
    exterior_id = m * m
    polygons.append(
        PlanarPolygon(exterior_id, tuple(complex(corners[rc]) for rc in ring), bounded=False)
    )
    ring_index = {rc: k for k, rc in enumerate(ring)}

    def value(r, c):
        return vals[r, c] if 0 <= r < m and 0 <= c < m else 0j

    pairings: list[EdgePairing] = []

    def glue(slot1, mu1, slot2, mu2, p, q):
        # p -> q is the source edge as traversed by slot1's polygon
        g = AffineMap.through(p + mu1 * np.conj(p), q + mu1 * np.conj(q),
                              p + mu2 * np.conj(p), q + mu2 * np.conj(q))
        pairings.append(EdgePairing(slot1, slot2, AffineMap(complex(g.a), complex(g.b))))

    for r in range(m):
        for c in range(m):
            me = r * m + c
            # right edge (edge 1: lower-right -> upper-right)
            p, q = corners[r, c + 1], corners[r + 1, c + 1]
            if c + 1 < m:
                glue((me, 1), vals[r, c], (me + 1, 3), vals[r, c + 1], p, q)
            else:
                glue((me, 1), vals[r, c], (exterior_id, ring_index[(r + 1, m)]), 0j, p, q)
            # top edge (edge 2: upper-right -> upper-left)
            p, q = corners[r + 1, c + 1], corners[r + 1, c]
            if r + 1 < m:
                glue((me, 2), vals[r, c], (me + m, 0), vals[r + 1, c], p, q)
            else:
                glue((me, 2), vals[r, c], (exterior_id, ring_index[(m, c)]), 0j, p, q)
            # left and bottom outer edges
            if c == 0:
                p, q = corners[r + 1, 0], corners[r, 0]
                glue((me, 3), vals[r, c], (exterior_id, ring_index[(r, 0)]), 0j, p, q)
            if r == 0:
                p, q = corners[0, c], corners[0, c + 1]
                glue((me, 0), vals[r, c], (exterior_id, ring_index[(0, c + 1)]), 0j, p, q)

    cycles = vertex_cycles(polygons, pairings)
    # identify each cycle with its lattice corner through any cell flag
    corner_cycle: dict[tuple[int, int], int] = {}
    offsets = ((0, 0), (0, 1), (1, 1), (1, 0))
    labelled = []
    for idx, cyc in enumerate(cycles):
        f = cyc.flags[0]
        if f.polygon == exterior_id:
            rc = ring[f.vertex]
        else:
            r, c = divmod(f.polygon, m)
            dr, dc = offsets[f.vertex]
            rc = (r + dr, c + dc)
        corner_cycle[rc] = idx
        labelled.append(VertexCycle(cyc.flags, cyc.total_angle, cyc.dilation, cyc.residue,
                                    False, f"corner{rc[0]},{rc[1]}"))
    if len(corner_cycle) != (m + 1) ** 2:
        raise GluingError("grid gluing did not produce one cycle per lattice corner")
    labelled.append(VertexCycle((), TAU, 1.0, -2 + 0j, True, "infinity"))
    cx = GluingComplex(polygons, pairings, labelled, corner_cycle, grid, pw)
    if cx.euler_characteristic() != 2:
        raise GluingError("grid gluing is not a sphere")
    return cx


@dataclass(frozen=True)
class CornerMonodromy:
    factor: complex
    log_factor: complex
    residue: complex


def corner_monodromy(m0: complex, m1: complex, m2: complex, m3: complex) -> CornerMonodromy:
    """Monodromy of the four-cell corner with quadrant values NE, NW, SW, SE."""
    for v in (m0, m1, m2, m3):
        if abs(v) >= 1:
            raise GluingError("quadrant value with modulus >= 1")
    ell = [(1 + v) / (1 - v) for v in (m0, m1, m2, m3)]
    factor = ell[1] * ell[3] / (ell[0] * ell[2])
    log_factor = cmath.log(ell[1]) + cmath.log(ell[3]) - cmath.log(ell[0]) - cmath.log(ell[2])
    # principal branch of log(factor); the sum above is exact to rounding when small
    if not -math.pi < log_factor.imag <= math.pi:
        log_factor = cmath.log(factor)
    return CornerMonodromy(factor, log_factor, log_factor / (TAU * 1j))


@dataclass(frozen=True)
class LocalModelChart:
    """Developed sectors around a finite vertex and the map closing them.

    Sector k (flag k of the cycle) is placed in the developed plane by
    ``z -> scales[k] * (z - vertices[k])``, sectors following each other
    anticlockwise.  With ``alpha = (log lambda + i theta)/(2 pi i)`` the
    coordinate ``u = developed**(1/alpha)`` closes the sectors into a
    punctured disk, and the similarity chart reads ``u**alpha`` there.
    """

    alpha: complex
    closing_exponent: complex
    scales: tuple[complex, ...]
    vertices: tuple[complex, ...]
    before_directions: tuple[complex, ...]
    start_angles: tuple[float, ...]
    closing_factor: complex

    def log_developed(self, sector: int, z: complex) -> complex:
        """Continuous logarithm of the developed position of z (in sector ``sector``)."""
        offset = z - self.vertices[sector]
        rel = cmath.phase(offset / self.before_directions[sector])
        if rel < 0:
            rel += TAU
        modulus = abs(self.scales[sector] * offset)
        return math.log(modulus) + 1j * (self.start_angles[sector] + rel)

    def coordinate(self, sector: int, z: complex) -> complex:
        """Uniformizing coordinate of a point of the given sector."""
        return cmath.exp(self.log_developed(sector, z) * self.closing_exponent)


def local_model_chart(cycle: VertexCycle, polygons: list[PlanarPolygon], pairings: list[EdgePairing]) -> LocalModelChart:
    """Develop the sectors of a finite vertex anticlockwise.

    Returns the chart exponent ``alpha = (log lambda + i theta)/(2 pi i)``
    (equal to residue + 1) together with ``closing_exponent = 1/alpha``,
    the power that turns the developed sector into a neighbourhood of 0.
    """
    if cycle.infinite or not cycle.flags:
        raise GluingError("local model needs a finite vertex")
    if cycle.total_angle <= 0:
        raise GluingError("zero total angle")
    alpha = (math.log(cycle.dilation) + 1j * cycle.total_angle) / (TAU * 1j)
    table: dict[tuple[int, int], EdgePairing] = {}
    for p in pairings:
        table[p.first] = p
        table[p.second] = p
    by_id = {p.id: p for p in polygons}
    scales, verts, dirs, starts = [], [], [], []
    scale = 1 + 0j
    angle = None
    for flag in cycle.flags:
        poly = by_id[flag.polygon]
        v = poly.vertices[flag.vertex]
        d = poly.vertices[(flag.vertex + 1) % len(poly)] - v
        if angle is None:
            angle = cmath.phase(d)
        scales.append(scale)
        verts.append(v)
        dirs.append(d / abs(d))
        starts.append(angle)
        angle += poly.sector_angle(flag.vertex)
        slot = (flag.polygon, flag.edge_after(len(poly)))
        scale = scale / table[slot].map_from(slot).a
    return LocalModelChart(
        alpha=alpha,
        closing_exponent=1 / alpha,
        scales=tuple(scales),
        vertices=tuple(verts),
        before_directions=tuple(dirs),
        start_angles=tuple(starts),
        closing_factor=scale,
    )


def triangle_fixture() -> GluingComplex:
    """Equilateral triangle glued to a right isosceles triangle along all three edges.

    Vertex C carries the 60 and 90 degree corners; A and B carry a 60 and
    a 45 degree corner each, A being the one with dilation sqrt(2).
    Cycles are returned in the order A, B, C.
    """
    r2 = math.sqrt(2.0)
    equilateral = PlanarPolygon(0, (0j, 1 + 0j, cmath.exp(1j * math.pi / 3)))
    right = PlanarPolygon(1, (0j, complex(r2, 0), complex(r2 / 2, r2 / 2)))
    polys = [equilateral, right]

    def pair(s1, s2):
        p0, p1 = polys[s1[0]].edge(s1[1])
        q0, q1 = polys[s2[0]].edge(s2[1])
        return EdgePairing(s1, s2, AffineMap.through(p0, p1, q1, q0))

    # long side of the right triangle against a side of the equilateral one
    pairings = [pair((0, 0), (1, 0)), pair((0, 1), (1, 2)), pair((0, 2), (1, 1))]
    named = []
    for cyc in vertex_cycles(polys, pairings):
        if abs(cyc.total_angle - 5 * TAU / 12) < 1e-9:
            label = "C"
        else:
            label = "A" if cyc.dilation > 1 else "B"
        named.append(VertexCycle(cyc.flags, cyc.total_angle, cyc.dilation, cyc.residue, False, label))
    named.sort(key=lambda c: c.label)
    cx = GluingComplex(polys, pairings, named)
    if cx.euler_characteristic() != 2:
        raise GluingError("triangle gluing is not a sphere")
    return cx


def triangle_vertex_order(cx: GluingComplex) -> list[str]:
    """Labels of the vertices of each polygon of the triangle fixture, in boundary order."""
    out = []
    for poly in cx.polygons:
        names = [""] * len(poly)
        for cyc in cx.cycles:
            for f in cyc.flags:
                if f.polygon == poly.id:
                    names[f.vertex] = cyc.label
        out.append("".join(names))
    return out
