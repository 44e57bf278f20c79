"""Path integrals of a rational symbol: transport, developed charts, geodesics.

Sign convention: the similarity structure's monodromy along a loop is
``exp(+integral)``; parallel transport of a vector multiplies it by
``exp(-integral)``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from ._quadrature import (
    PathClearanceError,
    build_path_rule,
    develop_rule,
    segment_distance,
    segment_log_increments,
)
from .christoffel import ChristoffelSymbol, normal_form_series

__all__ = [
    "PolylinePath",
    "TransportResult",
    "DevelopedChart",
    "GeodesicTrace",
    "SaddleConnection",
    "PathClearanceError",
    "NonIntegrableEndpointError",
    "NoConnectionError",
    "segment_log_integral",
    "parallel_transport",
    "develop_chart",
    "trace_geodesic",
    "shoot_saddle_connection",
    "scene_diameter",
]


class NonIntegrableEndpointError(ValueError):
    """Development toward a pole with Re res <= -1."""


class NoConnectionError(RuntimeError):
    """Shooting found no sign change of the miss distance."""


@dataclass(frozen=True)
class PolylinePath:
    vertices: tuple
    closed: bool = False

    def __init__(self, vertices, closed: bool = False) -> None:
        verts = tuple(complex(v) for v in vertices)
        if closed and verts[0] != verts[-1]:
            verts = verts + (verts[0],)
        if len(verts) < 2:
            raise ValueError("a path needs at least two vertices")
        for a, b in zip(verts, verts[1:]):
            if a == b:
                raise ValueError("consecutive path vertices coincide")
        object.__setattr__(self, "vertices", verts)
        object.__setattr__(self, "closed", closed)

    @property
    def start(self) -> complex:
        return self.vertices[0]

    @property
    def end(self) -> complex:
        return self.vertices[-1]

    def reversed(self) -> PolylinePath:
        return PolylinePath(self.vertices[::-1], self.closed)

    def then(self, other: PolylinePath) -> PolylinePath:
        if other.start != self.end:
            raise ValueError("paths do not connect")
        return PolylinePath(self.vertices + other.vertices[1:])

    def length(self) -> float:
        v = np.asarray(self.vertices)
        return float(np.abs(np.diff(v)).sum())

    @classmethod
    def square_loop(cls, center: complex, half_side: float) -> PolylinePath:
        c, h = complex(center), half_side
        return cls([c + h * (1 - 1j), c + h * (1 + 1j), c + h * (-1 + 1j), c + h * (-1 - 1j)], closed=True)

    @classmethod
    def circle_loop(cls, center: complex, radius: float, sides: int = 64) -> PolylinePath:
        ang = 2 * np.pi * np.arange(sides) / sides
        return cls(complex(center) + radius * np.exp(1j * ang), closed=True)

    def to_json(self) -> dict:
        return {"vertices": [[v.real, v.imag] for v in self.vertices], "closed": self.closed}

    @classmethod
    def from_json(cls, data) -> PolylinePath:
        if isinstance(data, dict):
            return cls([complex(*v) for v in data["vertices"]], bool(data.get("closed", False)))
        return cls([complex(*v) for v in data])


@dataclass(frozen=True)
class TransportResult:
    integral: complex
    holonomy_factor: complex
    winding: dict = field(default_factory=dict)

    @property
    def monodromy_factor(self) -> complex:
        return cmath.exp(self.integral)


def scene_diameter(sym: ChristoffelSymbol, points=()) -> float:
    pts = np.concatenate([np.asarray(sym.positions), np.asarray(list(points), complex)])
    if len(pts) < 2:
        return 1.0
    return float(max(np.ptp(pts.real), np.ptp(pts.imag), 1e-300))


def _active(sym: ChristoffelSymbol) -> tuple[np.ndarray, np.ndarray]:
    keep = sym.residues != 0
    return np.asarray(sym.positions[keep]), np.asarray(sym.residues[keep])


def segment_log_integral(sym: ChristoffelSymbol, path: PolylinePath,
                         clearance: float | None = None) -> TransportResult:
    """``integral of zeta`` along the path from the exact antiderivative.

    Each segment is split until it subtends less than pi/2 at every pole,
    then principal logarithms are summed.  ``winding[k]`` counts the net
    number of turns of the path around pole k.
    """
    poles, res = _active(sym)
    verts = path.vertices
    if clearance is None:
        clearance = 1e-9 * scene_diameter(sym, verts)
    total = np.zeros(len(poles), complex)
    for a, b in zip(verts, verts[1:]):
        if len(poles) and segment_distance(poles, a, b).min() <= clearance:
            raise PathClearanceError("a pole lies on the path (within clearance)")
        inc, _ = segment_log_increments(a, b, poles)
        total += inc
    winding = {}
    if len(poles):
        principal = np.log((verts[-1] - poles) / (verts[0] - poles)).imag
        turns = np.rint((total.imag - principal) / (2 * np.pi)).astype(int)
        idx = np.flatnonzero(sym.residues != 0)
        winding = {int(i): int(t) for i, t in zip(idx, turns) if t}
    tau = complex(total @ res) if len(poles) else 0j
    return TransportResult(tau, cmath.exp(-tau), winding)


def parallel_transport(sym: ChristoffelSymbol, path: PolylinePath, v0: complex) -> complex:
    """Solution of ``v' = -zeta(gamma) gamma' v`` at the end of the path."""
    return complex(v0) * segment_log_integral(sym, path).holonomy_factor


@dataclass
class DevelopedChart:
    """Germ ``(phi(z0), phi'(z0))`` continued along a polyline.

    ``vertex_values`` holds phi at the path vertices.  When the path ends at
    a bounded pole, ``resting_place`` is the limit of phi there.
    """

    symbol: ChristoffelSymbol
    basepoint: complex
    germ_value: complex
    germ_deriv: complex
    path: PolylinePath
    vertex_values: np.ndarray
    resting_place: complex | None
    end_log_derivative: complex
    terminal_pole: int | None
    nodes: int

    @property
    def end_value(self) -> complex:
        return complex(self.vertex_values[-1])

    @property
    def end_derivative(self) -> complex:
        """phi' at the path end (undefined at a terminal pole)."""
        if self.terminal_pole is not None:
            raise ValueError("derivative is singular at the terminal pole")
        return self.germ_deriv * cmath.exp(self.end_log_derivative)

    def extend(self, z: complex, tol: float = 1e-14) -> complex:
        """phi at z, continued from the path end along a straight segment."""
        if self.terminal_pole is not None:
            raise ValueError("cannot continue past a terminal pole")
        z = complex(z)
        if z == self.path.end:
            return self.end_value
        ext = develop_chart(self.symbol, self.path.end, self.end_value, self.end_derivative,
                            PolylinePath([self.path.end, z]), tol=tol)
        return ext.end_value


def _terminal_index(poles: np.ndarray, end: complex, scale: float) -> int | None:
    if not len(poles):
        return None
    d = np.abs(poles - end)
    k = int(np.argmin(d))
    return k if d[k] <= 1e-12 * scale else None


def develop_chart(sym: ChristoffelSymbol, z0: complex, germ_value: complex, germ_deriv: complex,
                  path: PolylinePath | None = None, tol: float = 1e-14,
                  clearance: float | None = None) -> DevelopedChart:
    """Continue the chart germ ``phi(z0), phi'(z0)`` with ``phi''/phi' = zeta`` along ``path``.

    ``phi = germ_value + germ_deriv * int_{z0} exp(int_{z0} zeta)``.  A path
    ending on a pole uses a graded mesh on its final (straight) segment.
    """
    if germ_deriv == 0:
        raise ValueError("germ derivative must be nonzero")
    if path is None:
        raise ValueError("a path is required")
    if abs(path.start - z0) > 1e-15 * (1 + abs(z0)):
        raise ValueError("path must start at the basepoint")
    poles, res = _active(sym)
    scale = scene_diameter(sym, path.vertices)
    if clearance is None:
        clearance = 1e-9 * scale
    term = _terminal_index(poles, path.end, scale)
    term_res = 0j
    verts = list(path.vertices)
    if term is not None:
        term_res = complex(res[term])
        if term_res.real <= -1:
            raise NonIntegrableEndpointError("terminal pole has Re res <= -1")
        verts[-1] = complex(poles[term])
    rule = build_path_rule(verts, poles, term, term_res, tol=tol, clearance=clearance)
    dev = develop_rule(rule, poles, res)
    values = germ_value + germ_deriv * dev.vertex_integrals
    at_pole = term is not None or (len(sym) and np.min(np.abs(sym.positions - path.end)) <= 1e-12 * scale)
    rest = complex(values[-1]) if at_pole else None
    orig = np.flatnonzero(sym.residues != 0)
    return DevelopedChart(
        symbol=sym,
        basepoint=complex(z0),
        germ_value=complex(germ_value),
        germ_deriv=complex(germ_deriv),
        path=path,
        vertex_values=values,
        resting_place=rest,
        end_log_derivative=dev.end_log,
        terminal_pole=int(orig[term]) if term is not None else None,
        nodes=len(rule.nodes),
    )


@dataclass
class GeodesicTrace:
    times: np.ndarray
    points: np.ndarray
    velocities: np.ndarray
    reason: str
    captured_pole: int | None = None
    solution: object = field(default=None, repr=False)

    @property
    def path(self) -> PolylinePath:
        pts = self.points
        keep = np.concatenate([[True], np.diff(pts) != 0])
        return PolylinePath(pts[keep])

    def to_csv_rows(self):
        for t, z in zip(self.times, self.points):
            yield (float(t), float(z.real), float(z.imag))


def trace_geodesic(sym: ChristoffelSymbol, z0: complex, v0: complex, max_time: float,
                   tol: float = 1e-10, capture_radius: float | None = None,
                   domain_radius: float | None = None, ignore_poles=(),
                   samples: int = 400) -> GeodesicTrace:
    """Integrate ``z'' = -zeta(z) z'^2`` from ``(z0, v0)``.

    Stops when the curve enters ``capture_radius`` of a pole while heading
    inward, leaves the disk of ``domain_radius`` about the scene centre, or
    reaches ``max_time``.
    """
    if v0 == 0:
        raise ValueError("initial velocity must be nonzero")
    poles = np.asarray(sym.positions)
    res = np.asarray(sym.residues)
    diam = scene_diameter(sym, [z0])
    if capture_radius is None:
        capture_radius = 1e-4 * diam
    center = complex(poles.mean()) if len(poles) else complex(z0)
    if domain_radius is None:
        domain_radius = 10.0 * max(diam, abs(z0 - center))
    ignore = set(ignore_poles)
    watch = [k for k in range(len(poles)) if k not in ignore]

    def rhs(t, y):
        z = complex(y[0], y[1])
        v = complex(y[2], y[3])
        a = -complex(res @ (1.0 / (z - poles))) * v * v if len(poles) else 0j
        return np.array((v.real, v.imag, a.real, a.imag))

    events = []
    for k in watch:
        def ev(t, y, k=k):
            z = y[0] + 1j * y[1]
            return abs(z - poles[k]) - capture_radius
        ev.terminal = True
        ev.direction = -1
        events.append(ev)

    def exit_event(t, y):
        return abs(y[0] + 1j * y[1] - center) - domain_radius
    exit_event.terminal = True
    exit_event.direction = 1
    events.append(exit_event)

    y0 = [z0.real, z0.imag, complex(v0).real, complex(v0).imag]
    sol = solve_ivp(rhs, (0.0, max_time), y0, method="DOP853", rtol=tol, atol=tol * diam,
                    events=events, dense_output=True)
    reason, captured = "max_time", None
    t_end = sol.t[-1]
    if sol.status == -1:
        # step-size collapse right next to a pole is a capture the event missed
        z_end = sol.y[0, -1] + 1j * sol.y[1, -1]
        gaps = np.abs(z_end - poles) if len(poles) else np.array([np.inf])
        k = int(np.argmin(gaps))
        if k in ignore or gaps[k] > 1e-4 * diam:
            raise FloatingPointError(f"geodesic integration failed: {sol.message}")
        reason, captured = "captured", k
    for i, k in enumerate(watch):
        if len(sol.t_events[i]):
            reason, captured, t_end = "captured", k, float(sol.t_events[i][0])
    if len(sol.t_events[-1]):
        reason, t_end = "exit", float(sol.t_events[-1][0])
    ts = np.linspace(0.0, t_end, samples)
    ys = sol.sol(ts)
    pts = ys[0] + 1j * ys[1]
    vel = ys[2] + 1j * ys[3]
    if captured is not None:
        pts = np.append(pts, poles[captured])
        vel = np.append(vel, vel[-1])
        ts = np.append(ts, t_end)
    return GeodesicTrace(ts, pts, vel, reason, captured, sol)


@dataclass
class SaddleConnection:
    from_pole: int
    to_pole: int
    launch_angle: float
    miss: float
    iterations: int
    trace: GeodesicTrace

    @property
    def path(self) -> PolylinePath:
        return self.trace.path


def _launch(sym: ChristoffelSymbol, pole: int, theta: float, rho: float):
    """Start point and velocity of the geodesic leaving ``pole`` at normal-form angle theta."""
    p = complex(sym.positions[pole])
    r = complex(sym.residues[pole])
    if r == 0:
        w0 = rho * cmath.exp(1j * theta)
        return p + w0, w0 / rho, None
    nf = normal_form_series(sym, pole, order=8)
    alpha = nf.alpha
    w0 = rho * cmath.exp(1j * theta)
    # invert w(u) = w0 by Newton from u = w0
    u = w0
    for _ in range(30):
        f = complex(nf(p + u)) - w0
        u -= f / complex(nf.derivative(p + u))
        if abs(f) < 1e-16 * rho:
            break
    # chart phi = w^alpha; the ray through w0 has s = |w0^alpha| and dw/ds = w/(alpha s)
    s = abs(cmath.exp(alpha * cmath.log(w0)))
    dw = w0 / (alpha * s)
    dz = dw / complex(nf.derivative(p + u))
    return p + u, dz, s


def _closest_approach(trace: GeodesicTrace, q: complex, target: int | None = None):
    """Signed distance to q at closest approach and the time it happens.

    A trace captured by ``target`` is extended along its tangent line from
    the capture state.
    """
    sol = trace.solution
    ts = trace.times
    if target is not None and trace.captured_pole == target:
        z, v = trace.points[-2], trace.velocities[-2]
        d = q - z
        return (np.conj(v) * d).imag / abs(v), float(ts[-1])
    k = int(np.argmin(np.abs(trace.points[: len(ts)] - q)))
    lo, hi = ts[max(k - 1, 0)], ts[min(k + 1, len(ts) - 1)]

    def state(t):
        y = sol.sol(t)
        return y[0] + 1j * y[1], y[2] + 1j * y[3]

    def radial(t):
        z, v = state(t)
        return (np.conj(z - q) * v).real

    t_star = ts[k]
    if lo < hi and radial(lo) < 0 < radial(hi):
        t_star = brentq(radial, lo, hi, xtol=1e-16, rtol=1e-15)
    z, v = state(t_star)
    d = q - z
    # positive when q lies to the left of the direction of travel
    side = (np.conj(v) * d).imag
    return math.copysign(abs(d), side), float(t_star)


def _trim(trace: GeodesicTrace, t_stop: float, q: complex) -> GeodesicTrace:
    keep = trace.times < t_stop
    times = np.append(trace.times[keep], t_stop)
    pts = np.append(trace.points[keep], q)
    vel = np.append(trace.velocities[keep], trace.velocities[keep][-1])
    return GeodesicTrace(times, pts, vel, "connected", None, trace.solution)


def _chart_distance(sym: ChristoffelSymbol, p: complex, q: complex) -> tuple[float, complex]:
    """``|phi(q) - phi(p)|`` for the chart normalized at the segment midpoint, and that midpoint."""
    base = 0.5 * (p + q)
    poles = np.asarray(sym.positions)
    others = poles[(poles != p) & (poles != q)]
    step = 0.05 * abs(q - p) * 1j * (q - p) / abs(q - p)
    k = 0
    while len(others) and np.min(np.abs(others - base)) < 0.05 * abs(q - p) and k < 20:
        k += 1
        base = 0.5 * (p + q) + step * k * (-1) ** k
    phi_p = develop_chart(sym, base, 0, 1, PolylinePath([base, p])).end_value
    phi_q = develop_chart(sym, base, 0, 1, PolylinePath([base, q])).end_value
    return abs(phi_q - phi_p), base


def shoot_saddle_connection(sym: ChristoffelSymbol, from_pole: int, initial_direction: float,
                            to_pole: int, tol: float = 1e-8, bracket: tuple | None = None,
                            launch_radius: float | None = None, max_iter: int = 60) -> SaddleConnection:
    """Find the geodesic from one bounded pole to another by shooting.

    The unknown is the launch angle in the normal-form coordinate at
    ``from_pole``; the miss is the signed distance of closest approach to
    ``to_pole`` within a flight time slightly above the chart distance
    between the poles.  ``bracket`` is an angle interval with a sign
    change; without one, a bracket is searched around
    ``initial_direction``.
    """
    p = complex(sym.positions[from_pole])
    q = complex(sym.positions[to_pole])
    for k in (from_pole, to_pole):
        if sym.residues[k].real <= -1:
            raise ValueError("saddle connections join bounded poles")
    diam = scene_diameter(sym)
    dist = abs(q - p)
    if launch_radius is None:
        launch_radius = 1e-3 * dist
    chart_len, base = _chart_distance(sym, p, q)
    capture = max(0.1 * tol, 1e-6 * dist)

    def shoot(theta):
        z0, v0, _ = _launch(sym, from_pole, theta, launch_radius)
        # unit speed in the chart normalized at base: |phi'(z0) v| = 1
        dphi = cmath.exp(segment_log_integral(sym, PolylinePath([base, z0])).integral)
        v = v0 / abs(dphi * v0)
        trace = trace_geodesic(sym, z0, v, max_time=1.25 * chart_len, tol=1e-12,
                               capture_radius=capture, ignore_poles=(from_pole,),
                               domain_radius=20 * max(diam, dist))
        miss, t_star = _closest_approach(trace, q, to_pole)
        if abs(miss) < tol:
            trace = _trim(trace, t_star, q)
        return miss, trace

    def refine(a, b, fa, fb):
        # Illinois-style regula falsi keeps the bracket
        side = 0
        theta, miss, trace = a, fa, None
        for it in range(1, max_iter + 1):
            theta = (a * fb - b * fa) / (fb - fa)
            miss, trace = shoot(theta)
            if abs(miss) < tol:
                return SaddleConnection(from_pole, to_pole, float(theta), float(abs(miss)), it, trace)
            if abs(b - a) < 1e-15:
                break
            if np.sign(miss) == np.sign(fb):
                b, fb = theta, miss
                if side == -1:
                    fa *= 0.5
                side = -1
            else:
                a, fa = theta, miss
                if side == 1:
                    fb *= 0.5
                side = 1
        return None

    if bracket is not None:
        a, b = bracket
        fa, _ = shoot(a)
        fb, _ = shoot(b)
        if np.sign(fa) == np.sign(fb):
            raise NoConnectionError("bracket has no sign change")
        found = refine(a, b, fa, fb)
        if found is None:
            raise NoConnectionError("shooting stalled inside the bracket")
        return found

    m0, tr0 = shoot(initial_direction)
    if abs(m0) < tol:
        return SaddleConnection(from_pole, to_pole, initial_direction, abs(m0), 1, tr0)
    tried = set()
    for step in (0.02, 0.05, 0.1, 0.2, 0.4):
        for sgn in (1, -1):
            th = initial_direction + sgn * step
            m, tr = shoot(th)
            if abs(m) < tol:
                return SaddleConnection(from_pole, to_pole, th, abs(m), 1, tr)
            if np.sign(m) != np.sign(m0):
                lo, hi = sorted((initial_direction, th))
                tried.add((lo, hi))
                found = refine(initial_direction, th, m0, m)
                if found is not None:
                    return found
    # full scan of launch angles; prefer crossings with small misses on both sides
    grid = initial_direction + np.linspace(-np.pi, np.pi, 33)
    misses = [shoot(th)[0] for th in grid]
    cands = [(abs(misses[i]) + abs(misses[i + 1]), i) for i in range(32)
             if np.sign(misses[i]) != np.sign(misses[i + 1])]
    for _, i in sorted(cands):
        found = refine(grid[i], grid[i + 1], misses[i], misses[i + 1])
        if found is not None:
            return found
    raise NoConnectionError("no converging sign change of the miss distance")
