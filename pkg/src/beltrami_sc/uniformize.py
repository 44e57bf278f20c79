"""Schwarz-Christoffel parameter problem for glued polygons.

The unknowns are pole positions of a rational symbol whose residues are
fixed by the gluing.  For each face, the chart developed from an interior
basepoint has resting places at the face's poles; normalizing the first
two to 0 and 1 gives an affine-invariant configuration that must match
the target polygon.  The problem is solved by Levenberg-Marquardt with
continuation in the amplitude of the Beltrami coefficient, then the
straightening map is evaluated by inverting the aligned face charts.
"""

from __future__ import annotations

import cmath
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._quadrature import PathClearanceError, segment_distance, segment_integral
from .christoffel import INVERSION, ChristoffelSymbol, normal_form_series, pullback
from .fields import GridSpec, PiecewiseField
from .gluing import AffineMap, GluingComplex, build_grid_complex, triangle_vertex_order
from .transport import (
    NoConnectionError,
    PolylinePath,
    SaddleConnection,
    develop_chart,
    shoot_saddle_connection,
)

__all__ = [
    "INFINITY",
    "FaceTarget",
    "ParameterProblem",
    "SolverOptions",
    "SolveReport",
    "FaceChart",
    "ExteriorChart",
    "StraighteningMap",
    "SolverError",
    "FacePathObstruction",
    "PoleCollisionError",
    "NewtonError",
    "grid_problem",
    "triangle_problem",
    "per_map",
    "residual_vector",
    "solve_parameter_problem",
    "evaluate_straightening",
    "post_compose",
    "normalize",
    "Skeleton",
    "skeleton",
    "edges_disjoint",
    "map_to_json",
    "map_from_json",
]

log = logging.getLogger(__name__)

INFINITY = -1


class SolverError(RuntimeError):
    """The parameter problem could not be solved."""


class FacePathObstruction(SolverError):
    """No admissible basepoint for a face's development paths."""


class PoleCollisionError(SolverError):
    """Two poles came closer than the collision radius."""


class NewtonError(RuntimeError):
    """Chart inversion did not converge."""

    def __init__(self, message: str, last: complex):
        super().__init__(message)
        self.last = last


@dataclass(frozen=True)
class FaceTarget:
    """Target polygon of one face, with its boundary poles in anticlockwise order."""

    face_id: int
    poles: tuple[int, ...]
    vertices: tuple[complex, ...]
    basepoint_hint: complex | None = None

    def __post_init__(self) -> None:
        if len(self.vertices) < 3 or len(self.poles) != len(self.vertices):
            raise ValueError("a face needs >= 3 vertices, one pole per vertex")

    @property
    def normalized(self) -> np.ndarray:
        v = np.asarray(self.vertices, dtype=complex)
        out = (v - v[0]) / (v[1] - v[0])
        out[0], out[1] = 0, 1
        return out


@dataclass
class ParameterProblem:
    residues: np.ndarray
    initial_positions: np.ndarray
    pinned: tuple[int, ...]
    faces: list[FaceTarget]
    infinity_residue: complex = -2 + 0j
    labels: list[str] = field(default_factory=list)

    @property
    def free(self) -> np.ndarray:
        mask = np.ones(len(self.residues), bool)
        mask[list(self.pinned)] = False
        return np.flatnonzero(mask)

    def symbol(self, positions=None) -> ChristoffelSymbol:
        pos = self.initial_positions if positions is None else positions
        return ChristoffelSymbol(pos, self.residues, self.infinity_residue)


@dataclass
class SolverOptions:
    tol: float = 1e-10
    max_iter: int = 40
    continuation_steps: int = 4
    min_step: float = 1.0 / 1024
    damping: float = 1e-3
    jacobian: str = "analytic"
    fd_step: float = 1e-7
    collision_radius: float = 1e-6
    quad_tol: float = 1e-14
    threads: int = 1
    pinned: tuple[tuple[int, int], ...] | None = None

    @classmethod
    def from_json(cls, data: dict | None) -> SolverOptions:
        data = dict(data or {})
        names = {"tol": "tol", "maxIter": "max_iter", "continuationSteps": "continuation_steps",
                 "minStep": "min_step", "damping": "damping", "jacobian": "jacobian",
                 "fdStep": "fd_step", "threads": "threads"}
        kw = {names[k]: v for k, v in data.items() if k in names}
        if "pinned" in data:
            kw["pinned"] = tuple(tuple(p) for p in data["pinned"])
        opts = cls(**kw)
        if opts.tol <= 0 or opts.max_iter < 1 or opts.continuation_steps < 1:
            raise ValueError("solver tolerances and counts must be positive")
        return opts


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    continuation_steps: list[float] = field(default_factory=list)
    final_residual: float = 0.0
    timings: dict = field(default_factory=dict)

    def to_json(self, include_timings: bool = True) -> dict:
        out = {
            "iterations": self.iterations,
            "residualHistory": list(self.residual_history),
            "continuationSteps": list(self.continuation_steps),
            "finalResidual": self.final_residual,
        }
        if include_timings:
            out["timings"] = dict(self.timings)
        return out


# ---------------------------------------------------------------- problems


def grid_problem(cx: GluingComplex, pinned: tuple[tuple[int, int], ...] | None = None) -> ParameterProblem:
    """Parameter problem of a grid complex; poles are indexed ``row * (m+1) + col``."""
    if cx.grid is None:
        raise ValueError("not a grid complex")
    grid = cx.grid
    m = grid.m
    n1 = m + 1
    residues = np.zeros(n1 * n1, complex)
    labels = []
    for r in range(n1):
        for c in range(n1):
            residues[r * n1 + c] = cx.cycles[cx.corner_cycle[(r, c)]].residue
            labels.append(f"corner{r},{c}")
    positions = grid.corners().reshape(-1).astype(complex)
    faces = []
    for r in range(m):
        for c in range(m):
            idx = (r * n1 + c, r * n1 + c + 1, (r + 1) * n1 + c + 1, (r + 1) * n1 + c)
            faces.append(FaceTarget(r * m + c, idx, cx.polygons[r * m + c].vertices))
    if pinned is None:
        pinned = ((0, 0), (0, m))
    pin_idx = tuple(r * n1 + c for r, c in pinned)
    if len(set(pin_idx)) != 2:
        raise ValueError("exactly two distinct corners must be pinned")
    inf = cx.cycles[-1].residue if cx.cycles and cx.cycles[-1].infinite else -2 + 0j
    return ParameterProblem(residues, positions, pin_idx, faces, inf, labels)


def triangle_problem(cx: GluingComplex) -> ParameterProblem:
    """Triangle fixture: A at -1, B at 1, C at infinity; no unknowns."""
    by_label = {c.label: c for c in cx.cycles}
    residues = np.array([by_label["A"].residue, by_label["B"].residue], complex)
    index = {"A": 0, "B": 1, "C": INFINITY}
    faces = []
    for poly, order in zip(cx.polygons, triangle_vertex_order(cx)):
        a, b = order.index("A"), order.index("B")
        # A -> B -> infinity anticlockwise bounds the upper half plane
        hint = 1j if (a + 1) % 3 == b else -1j
        faces.append(FaceTarget(poly.id, tuple(index[ch] for ch in order), poly.vertices, hint))
    return ParameterProblem(residues, np.array([-1 + 0j, 1 + 0j]), (0, 1), faces,
                            by_label["C"].residue, ["A", "B"])


# ---------------------------------------------------------------- per map


def _face_basepoint(face: FaceTarget, pos: np.ndarray, act_pos: np.ndarray, clearance: float) -> complex:
    if face.basepoint_hint is not None:
        return complex(face.basepoint_hint)
    pts = pos[list(face.poles)]
    candidates = [complex(pts.mean())]
    n = len(pts)
    diag = max(((i, j) for i in range(n) for j in range(i + 2, n) if not (i == 0 and j == n - 1)),
               key=lambda ij: abs(pts[ij[0]] - pts[ij[1]]), default=None)
    if diag is not None:
        candidates.append(complex(0.5 * (pts[diag[0]] + pts[diag[1]])))
    for b in candidates:
        ok = True
        for p in pts:
            others = act_pos[np.abs(act_pos - p) > 0]
            if len(others) and segment_distance(others, b, p).min() <= clearance:
                ok = False
                break
        if ok:
            return b
    raise FacePathObstruction(f"face {face.face_id}: no clear development paths")


def _resting_place(sym: ChristoffelSymbol, base: complex, pole: int, tol: float) -> complex:
    """Resting place at a pole (or at infinity) of the chart with germ (0, 1) at base."""
    if pole == INFINITY:
        inv = pullback(sym, INVERSION)
        wb = 1 / base
        chart = develop_chart(inv, wb, 0, -base * base, PolylinePath([wb, 0]), tol=tol)
        return chart.end_value
    p = complex(sym.positions[pole])
    return develop_chart(sym, base, 0, 1, PolylinePath([base, p]), tol=tol).end_value


def _clearance(pos: np.ndarray) -> float:
    if len(pos) < 2:
        return 1e-9
    return 1e-9 * float(max(np.ptp(pos.real), np.ptp(pos.imag)))


def face_resting_places(sym: ChristoffelSymbol, face: FaceTarget, tol: float = 1e-14) -> tuple[complex, np.ndarray]:
    """Basepoint and resting places of a face's chart (germ (0, 1) at the basepoint)."""
    pos = np.asarray(sym.positions)
    act = pos[np.asarray(sym.residues) != 0]
    base = _face_basepoint(face, pos, act, _clearance(pos))
    rest = np.array([_resting_place(sym, base, k, tol) for k in face.poles])
    return base, rest


def _normalize_config(rest: np.ndarray) -> np.ndarray:
    out = (rest - rest[0]) / (rest[1] - rest[0])
    out[0], out[1] = 0, 1
    return out


def per_map(sym: ChristoffelSymbol, problem: ParameterProblem, tol: float = 1e-14) -> list[np.ndarray]:
    """Normalized resting-place configuration of every face."""
    return [_normalize_config(face_resting_places(sym, f, tol)[1]) for f in problem.faces]


def _face_rows(face: FaceTarget, pos: np.ndarray, res: np.ndarray, act_idx: np.ndarray,
               clearance: float, tol: float, jacobian: bool):
    """Residual entries ``c_i - target_i`` (i >= 2) of a finite face and their Jacobian rows."""
    n = len(pos)
    act_pos = pos[act_idx]
    base = _face_basepoint(face, pos, act_pos, clearance)
    values = []
    jac = np.zeros((len(face.poles), n), complex) if jacobian else None
    for i, k in enumerate(face.poles):
        keep = act_idx != k
        seg = segment_integral(base, pos[k], res[k], act_pos[keep], res[act_idx[keep]],
                               tol=tol, clearance=clearance, jacobian=jacobian)
        values.append(seg.value)
        if jacobian:
            jac[i, act_idx[keep]] = seg.d_others
            jac[i, k] += seg.d_end
    rest = np.array(values)
    d10 = rest[1] - rest[0]
    conf = (rest - rest[0]) / d10
    resid = conf[2:] - face.normalized[2:]
    if not jacobian:
        return resid, None
    d_rows = (jac[2:] - jac[0]) / d10 - conf[2:, None] * (jac[1] - jac[0]) / d10
    return resid, d_rows


def residual_vector(problem: ParameterProblem, positions: np.ndarray, jacobian: bool = False,
                    tol: float = 1e-14, threads: int = 1):
    """Stacked face residuals (complex) and, optionally, the Jacobian in all positions."""
    pos = np.asarray(positions, dtype=complex)
    res = np.asarray(problem.residues)
    act_idx = np.flatnonzero(res != 0)
    clearance = _clearance(pos)
    faces = problem.faces
    if any(k == INFINITY for f in faces for k in f.poles):
        sym = problem.symbol(pos)
        confs = per_map(sym, problem, tol)
        r = np.concatenate([c[2:] - f.normalized[2:] for c, f in zip(confs, faces)])
        if jacobian:
            raise ValueError("Jacobian is only available for finite faces")
        return r, None

    def work(chunk):
        return [_face_rows(f, pos, res, act_idx, clearance, tol, jacobian) for f in chunk]

    if threads > 1 and len(faces) > 1:
        size = math.ceil(len(faces) / threads)
        chunks = [faces[i:i + size] for i in range(0, len(faces), size)]
        with ThreadPoolExecutor(max_workers=threads) as pool:
            blocks = [b for part in pool.map(work, chunks) for b in part]
    else:
        blocks = work(faces)
    r = np.concatenate([b[0] for b in blocks])
    if not jacobian:
        return r, None
    return r, np.vstack([b[1] for b in blocks])


# ---------------------------------------------------------------- solver


def _min_separation(pos: np.ndarray) -> float:
    d = np.abs(pos[:, None] - pos[None, :])
    np.fill_diagonal(d, np.inf)
    return float(d.min()) if len(pos) > 1 else math.inf


def _lm_solve(problem: ParameterProblem, x0: np.ndarray, opts: SolverOptions, report: SolveReport):
    """Levenberg-Marquardt on the free positions; returns positions or raises SolverError."""
    free = problem.free
    pos = np.array(x0, dtype=complex)
    scale = float(max(np.ptp(pos.real), np.ptp(pos.imag)))
    collision = opts.collision_radius * scale

    def evaluate(p, jac):
        if jac and opts.jacobian == "analytic":
            r, j = residual_vector(problem, p, True, opts.quad_tol, opts.threads)
            return r, j[:, free]
        r, _ = residual_vector(problem, p, False, opts.quad_tol, opts.threads)
        if not jac:
            return r, None
        h = opts.fd_step * scale
        cols = []
        for k in free:
            q = p.copy()
            q[k] += h
            cols.append((residual_vector(problem, q, False, opts.quad_tol, opts.threads)[0] - r) / h)
        return r, np.stack(cols, axis=1)

    r, jac = evaluate(pos, True)
    norm = float(np.max(np.abs(r))) if len(r) else 0.0
    report.residual_history.append(norm)
    lam = opts.damping
    for _ in range(opts.max_iter):
        if norm < opts.tol:
            return pos, norm
        g = jac.conj().T @ r
        a = jac.conj().T @ jac
        diag = np.real(np.diag(a)).copy()
        diag[diag <= 0] = 1.0
        if np.max(np.abs(g)) < 1e-15 * max(1.0, norm):
            raise SolverError(f"stagnation: gradient vanishes with residual {norm:.3g}")
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(a + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10
                continue
            trial = pos.copy()
            trial[free] += step
            if _min_separation(trial) < collision:
                lam *= 10
                continue
            try:
                r_new, _ = evaluate(trial, False)
            except (PathClearanceError, FacePathObstruction):
                lam *= 10
                continue
            n_new = float(np.max(np.abs(r_new)))
            if np.isfinite(n_new) and np.linalg.norm(r_new) < np.linalg.norm(r):
                accepted = True
                pos = trial
                lam = max(lam / 10, 1e-12)
                break
            lam *= 10
        report.iterations += 1
        if not accepted:
            raise SolverError(f"damping exhausted with residual {norm:.3g}")
        r, jac = evaluate(pos, True)
        norm = float(np.max(np.abs(r)))
        report.residual_history.append(norm)
        log.debug("LM iteration %d: residual %.3e, lambda %.1e", report.iterations, norm, lam)
    if norm < opts.tol:
        return pos, norm
    raise SolverError(f"no convergence in {opts.max_iter} iterations (residual {norm:.3g})")


@dataclass(frozen=True)
class FaceChart:
    """Chart of one face: germ (0, 1) at ``basepoint`` followed by ``alignment``."""

    face_id: int
    poles: tuple[int, ...]
    basepoint: complex
    alignment: AffineMap


@dataclass(frozen=True)
class ExteriorChart:
    """Chart of the exterior face, developed from ``center + radius * exp(i base_angle)``."""

    center: complex
    radius: float
    base_angle: float
    alignment: AffineMap
    boundary: tuple[int, ...]

    @property
    def basepoint(self) -> complex:
        return self.center + self.radius * cmath.exp(1j * self.base_angle)

    def path_to(self, u: complex) -> PolylinePath:
        """Anticlockwise arc on the base circle, then radially inward to u."""
        ang = cmath.phase(u - self.center)
        delta = (ang - self.base_angle) % (2 * math.pi)
        n = max(1, math.ceil(delta / (math.pi / 16)))
        arc = [self.center + self.radius * cmath.exp(1j * (self.base_angle + delta * k / n)) for k in range(n + 1)]
        if delta == 0:
            arc = arc[:1]
        verts = arc + [complex(u)]
        if abs(verts[-1] - verts[-2]) == 0:
            verts.pop()
        return PolylinePath(verts)


@dataclass
class StraighteningMap:
    symbol: ChristoffelSymbol
    problem: ParameterProblem
    complex: GluingComplex
    face_charts: list[FaceChart]
    exterior: ExteriorChart | None
    post: AffineMap = field(default_factory=lambda: AffineMap(1 + 0j, 0j))
    report: SolveReport = field(default_factory=SolveReport)

    @property
    def grid(self) -> GridSpec | None:
        return self.complex.grid

    @property
    def piecewise(self) -> PiecewiseField | None:
        return self.complex.piecewise

    def pole_of_corner(self, row: int, col: int) -> complex:
        n1 = self.grid.m + 1
        return complex(self.symbol.positions[row * n1 + col])

    def __call__(self, z):
        return evaluate_straightening(self, z)


def _face_charts(sym: ChristoffelSymbol, problem: ParameterProblem, tol: float) -> list[FaceChart]:
    charts = []
    for face in problem.faces:
        base, rest = face_resting_places(sym, face, tol)
        v = face.vertices
        s = AffineMap.through(rest[0], rest[1], v[0], v[1])
        charts.append(FaceChart(face.face_id, face.poles, base, AffineMap(complex(s.a), complex(s.b))))
    return charts


def _exterior_chart(sym: ChristoffelSymbol, grid: GridSpec, tol: float) -> ExteriorChart:
    m = grid.m
    n1 = m + 1
    ring = [(k, 0) for k in range(m)] + [(m, k) for k in range(m)] + \
           [(m - k, m) for k in range(m)] + [(0, m - k) for k in range(m)]
    idx = tuple(r * n1 + c for r, c in ring)
    pos = np.asarray(sym.positions)
    bpos = pos[list(idx)]
    center = complex(bpos.mean())
    radius = 2.0 * float(np.max(np.abs(pos - center)))
    chart = ExteriorChart(center, radius, 0.0, AffineMap(1 + 0j, 0j), idx)
    rest = []
    for k in idx:
        path = chart.path_to(pos[k])
        rest.append(develop_chart(sym, chart.basepoint, 0, 1, path, tol=tol).end_value)
    src = np.array([grid.corner(r, c) for r, c in ring])
    design = np.stack([np.array(rest), np.ones(len(rest))], axis=1)
    coef, *_ = np.linalg.lstsq(design, src, rcond=None)
    return replace(chart, alignment=AffineMap(complex(coef[0]), complex(coef[1])))


def solve_parameter_problem(cx: GluingComplex, options: SolverOptions | None = None) -> StraighteningMap:
    """Find pole positions realizing the glued polygons and assemble the straightening map."""
    opts = options or SolverOptions()
    report = SolveReport()
    t_start = time.perf_counter()
    if cx.grid is None:
        problem = triangle_problem(cx)
        r, _ = residual_vector(problem, problem.initial_positions, tol=opts.quad_tol)
        norm = float(np.max(np.abs(r)))
        report.residual_history.append(norm)
        report.final_residual = norm
        if norm > max(opts.tol, 1e-8):
            raise SolverError(f"fixture residual {norm:.3g} exceeds tolerance")
        sym = problem.symbol()
        charts = _face_charts(sym, problem, opts.quad_tol)
        report.timings["solve_s"] = time.perf_counter() - t_start
        return StraighteningMap(sym, problem, cx, charts, None, report=report)

    pw = cx.piecewise
    if pw is None:
        raise ValueError("grid complex without its piecewise field")
    if not pw.support_inside():
        raise SolverError("field must vanish on the boundary cells of the grid")
    target_problem = grid_problem(cx, opts.pinned)
    x = target_problem.initial_positions.copy()
    if np.all(pw.cell_values == 0):
        r, _ = residual_vector(target_problem, x, tol=opts.quad_tol)
        report.residual_history.append(float(np.max(np.abs(r))))
        report.continuation_steps.append(1.0)
    else:
        t, dt = 0.0, 1.0 / opts.continuation_steps
        x_prev, t_prev = None, None
        while t < 1.0:
            t_new = min(1.0, t + dt)
            prob = grid_problem(build_grid_complex(pw.scaled(t_new)), opts.pinned)
            guess = x.copy()
            if x_prev is not None:
                guess = x + (x - x_prev) * ((t_new - t) / (t - t_prev))
            try:
                x_new, _ = _lm_solve(prob, guess, opts, report)
                if _min_separation(x_new) < opts.collision_radius * float(np.ptp(x_new.real)):
                    raise PoleCollisionError("poles collided during continuation")
            except (SolverError, PathClearanceError) as exc:
                dt *= 0.5
                log.info("continuation step to t=%.6g failed (%s); halving to %.6g", t_new, exc, dt)
                if dt < opts.min_step:
                    raise SolverError(f"continuation stalled at t={t:.6g}: {exc}") from exc
                continue
            x_prev, t_prev = x, t
            x, t = x_new, t_new
            report.continuation_steps.append(t)
            dt = min(dt * 1.5, 1.0 - t) if t < 1.0 else dt
    report.timings["solve_s"] = time.perf_counter() - t_start
    r, _ = residual_vector(target_problem, x, tol=opts.quad_tol)
    report.final_residual = float(np.max(np.abs(r)))
    sym = target_problem.symbol(x)
    t1 = time.perf_counter()
    charts = _face_charts(sym, target_problem, opts.quad_tol)
    ext = _exterior_chart(sym, cx.grid, opts.quad_tol)
    report.timings["charts_s"] = time.perf_counter() - t1
    return StraighteningMap(sym, target_problem, cx, charts, ext, report=report)


# ---------------------------------------------------------------- evaluation


def _newton(chart_fn, target: complex, u0: complex, tol: float = 1e-14, max_iter: int = 60) -> complex:
    u = complex(u0)
    val, der = chart_fn(u)
    err = abs(val - target)
    scale = 1.0 + abs(target)
    for _ in range(max_iter):
        if err <= tol * scale:
            return u
        step = (val - target) / der
        lam = 1.0
        while True:
            trial = u - lam * step
            try:
                v2, d2 = chart_fn(trial)
                e2 = abs(v2 - target)
            except (PathClearanceError, ValueError):
                e2 = math.inf
            if e2 < err or lam < 1e-6:
                break
            lam *= 0.5
        if not e2 < err:
            break
        u, val, der, err = trial, v2, d2, e2
    if err <= 1e3 * tol * scale:
        return u
    raise NewtonError(f"chart inversion did not converge (residual {err:.3g})", u)


def _face_chart_fn(sym: ChristoffelSymbol, chart: FaceChart, tol: float):
    a = chart.alignment

    def fn(u):
        if u == chart.basepoint:
            return a(0j), a.a
        dev = develop_chart(sym, chart.basepoint, 0, 1, PolylinePath([chart.basepoint, u]), tol=tol)
        return a(dev.end_value), a.a * dev.end_derivative
    return fn


def _exterior_chart_fn(sym: ChristoffelSymbol, chart: ExteriorChart, tol: float):
    a = chart.alignment

    def fn(u):
        dev = develop_chart(sym, chart.basepoint, 0, 1, chart.path_to(u), tol=tol)
        return a(dev.end_value), a.a * dev.end_derivative
    return fn


def _evaluate_point(fmap: StraighteningMap, z: complex, tol: float) -> complex:
    grid = fmap.grid
    m = grid.m
    n1 = m + 1
    s = grid.cell_side
    u = (z.real - grid.x_min) / s
    v = (z.imag - grid.y_min) / s
    pos = fmap.symbol.positions
    # lattice corners (up to rounding of the cell coordinates) map to their poles
    snap = 1e-12 * max(1.0, m)
    if 0 <= round(u) <= m and 0 <= round(v) <= m and abs(u - round(u)) <= snap and abs(v - round(v)) <= snap:
        return complex(pos[int(round(v)) * n1 + int(round(u))])
    if 0 <= u <= m and 0 <= v <= m:
        row = min(int(math.floor(v)), m - 1)
        col = min(int(math.floor(u)), m - 1)
        mu = fmap.piecewise.cell_values[row, col]
        w = z + mu * z.conjugate()
        chart = fmap.face_charts[row * m + col]
        xi, eta = u - col, v - row
        p = pos[list(chart.poles)]
        seed = (1 - xi) * (1 - eta) * p[0] + xi * (1 - eta) * p[1] + xi * eta * p[2] + (1 - xi) * eta * p[3]
        # keep the seed off the poles: pull it slightly toward the face basepoint
        seed += 1e-6 * (chart.basepoint - seed)
        return _newton(_face_chart_fn(fmap.symbol, chart, tol), w, seed)
    ext = fmap.exterior
    seed = fmap.post(z)
    return _newton(_exterior_chart_fn(fmap.symbol, ext, tol), z, seed)


def evaluate_straightening(fmap: StraighteningMap, z, tol: float = 1e-14):
    """Value of the straightening map at source point(s) z."""
    if fmap.grid is None:
        raise ValueError("pointwise evaluation needs a grid-based map")
    arr = np.asarray(z, dtype=complex)
    if arr.ndim == 0:
        return _evaluate_point(fmap, complex(arr), tol)
    out = np.array([_evaluate_point(fmap, complex(v), tol) for v in arr.reshape(-1)])
    return out.reshape(arr.shape)


def post_compose(fmap: StraighteningMap, t: AffineMap) -> StraighteningMap:
    """The map ``t o f``; poles, basepoints and alignments move consistently."""
    if t.a == 0:
        raise ValueError("degenerate affine map")
    sym = ChristoffelSymbol(t(np.asarray(fmap.symbol.positions)), fmap.symbol.residues,
                            fmap.symbol.infinity_residue)

    def realign(s: AffineMap) -> AffineMap:
        return AffineMap(s.a / t.a, s.b)

    charts = [FaceChart(c.face_id, c.poles, complex(t(c.basepoint)), realign(c.alignment))
              for c in fmap.face_charts]
    ext = None
    if fmap.exterior is not None:
        e = fmap.exterior
        ext = ExteriorChart(complex(t(e.center)), e.radius * abs(t.a), e.base_angle + cmath.phase(t.a),
                            realign(e.alignment), e.boundary)
    return StraighteningMap(sym, fmap.problem, fmap.complex, charts, ext, t.compose(fmap.post), fmap.report)


def normalize(fmap: StraighteningMap) -> StraighteningMap:
    """Post-compose so that f(0) = 0 and f(1) = 1."""
    f0 = evaluate_straightening(fmap, 0j)
    f1 = evaluate_straightening(fmap, 1 + 0j)
    if f1 == f0:
        raise ValueError("degenerate normalization: f(0) = f(1)")
    return post_compose(fmap, AffineMap(1 / (f1 - f0), -f0 / (f1 - f0)))


# ---------------------------------------------------------------- skeleton


@dataclass
class Skeleton:
    """Saddle connections along the paired edges and the face cycles they bound."""

    edges: dict[tuple[int, int], np.ndarray]
    faces: list[tuple[int, ...]]
    vertices: np.ndarray
    failures: dict[tuple[int, int], str] = field(default_factory=dict)


def _launch_angle(sym: ChristoffelSymbol, pole: int, toward: complex) -> float:
    """Normal-form angle at ``pole`` of the direction to a nearby point."""
    if sym.residues[pole] == 0:
        return cmath.phase(toward - sym.positions[pole])
    nf = normal_form_series(sym, pole)
    return cmath.phase(complex(nf(toward)))


def _edge_by_evaluation(fmap: StraighteningMap, a: tuple[int, int], b: tuple[int, int], samples: int) -> np.ndarray:
    grid = fmap.grid
    za, zb = grid.corner(*a), grid.corner(*b)
    t = np.linspace(0.0, 1.0, samples)
    pts = za + t * (zb - za)
    return np.asarray(evaluate_straightening(fmap, pts))


def skeleton(fmap: StraighteningMap, method: str = "shoot", tol: float = 1e-9, samples: int = 33) -> Skeleton:
    """Image of the source 1-skeleton.

    With ``method="shoot"`` every edge is found as a saddle connection
    between its solved poles, seeded by the direction of the evaluated
    image edge; ``method="evaluate"`` maps sample points of each lattice
    edge through the straightening map.
    """
    sym = fmap.symbol
    pos = np.asarray(sym.positions)
    if fmap.grid is None:
        return _triangle_skeleton(fmap, tol)
    m = fmap.grid.m
    n1 = m + 1
    edges: dict[tuple[int, int], np.ndarray] = {}
    failures: dict[tuple[int, int], str] = {}
    pairs = []
    for r in range(n1):
        for c in range(n1):
            if c < m:
                pairs.append(((r, c), (r, c + 1)))
            if r < m:
                pairs.append(((r, c), (r + 1, c)))
    for a, b in pairs:
        ia, ib = a[0] * n1 + a[1], b[0] * n1 + b[1]
        if method == "evaluate":
            edges[(ia, ib)] = _edge_by_evaluation(fmap, a, b, samples)
            continue
        if sym.residues[ia] == 0 and sym.residues[ib] == 0 and not np.any(sym.residues):
            edges[(ia, ib)] = np.array([pos[ia], pos[ib]])
            continue
        grid = fmap.grid
        near = evaluate_straightening(fmap, grid.corner(*a) + 0.01 * (grid.corner(*b) - grid.corner(*a)))
        try:
            conn = shoot_saddle_connection(sym, ia, _launch_angle(sym, ia, near), ib, tol=tol)
            edges[(ia, ib)] = np.concatenate([[pos[ia]], conn.path.vertices])
        except (NoConnectionError, FloatingPointError, ValueError) as exc:
            failures[(ia, ib)] = str(exc)
    faces = [f.poles for f in fmap.problem.faces]
    return Skeleton(edges, faces, pos.copy(), failures)


def _triangle_skeleton(fmap: StraighteningMap, tol: float) -> Skeleton:
    sym = fmap.symbol
    edges: dict[tuple[int, int], np.ndarray] = {}
    failures: dict[tuple[int, int], str] = {}
    try:
        conn: SaddleConnection = shoot_saddle_connection(sym, 0, 0.0, 1, tol=tol)
        edges[(0, 1)] = np.concatenate([[sym.positions[0]], conn.path.vertices])
    except NoConnectionError as exc:
        failures[(0, 1)] = str(exc)
    # the edges to the vertex at infinity are the rays developed to infinity from each pole
    for k in (0, 1):
        p = complex(sym.positions[k])
        edges[(k, INFINITY)] = np.array([p, p * 1e6])
    return Skeleton(edges, [f.poles for f in fmap.problem.faces], np.asarray(sym.positions).copy(), failures)


def _segments(path: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return path[:-1], path[1:]


def edges_disjoint(edges: dict, tol: float = 1e-9) -> bool:
    """True when no two polylines meet except at shared endpoints."""
    keys = list(edges)
    for i, ka in enumerate(keys):
        pa = np.asarray(edges[ka])
        a0, a1 = _segments(pa)
        for kb in keys[i + 1:]:
            pb = np.asarray(edges[kb])
            shared = {p for p in (pa[0], pa[-1]) if np.min(np.abs(np.array([pb[0], pb[-1]]) - p)) < tol}
            b0, b1 = _segments(pb)
            d1 = a1 - a0
            d2 = b1 - b0
            cross = (np.conj(d1)[:, None] * d2[None, :]).imag
            diff = b0[None, :] - a0[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                s = (np.conj(diff) * d2[None, :]).imag / cross
                u = (np.conj(diff) * d1[:, None]).imag / cross
            hit = (np.abs(cross) > 0) & (s > 0) & (s < 1) & (u > 0) & (u < 1)
            if not np.any(hit):
                continue
            ii, jj = np.nonzero(hit)
            pts = a0[ii] + s[ii, jj] * d1[ii]
            for p in pts:
                if not any(abs(p - q) < 1e-6 * (1 + abs(q)) for q in shared):
                    return False
    return True


# ---------------------------------------------------------------- serialization


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


def _unpair(p) -> complex:
    return complex(float(p[0]), float(p[1]))


def map_to_json(fmap: StraighteningMap) -> dict:
    """Solved poles, chart data and normalization; the source complex is not included."""
    out = {
        "symbol": fmap.symbol.to_json(),
        "post": {"a": _pair(fmap.post.a), "b": _pair(fmap.post.b)},
        "faces": [
            {"id": c.face_id, "poles": list(c.poles), "basepoint": _pair(c.basepoint),
             "alignment": {"a": _pair(c.alignment.a), "b": _pair(c.alignment.b)}}
            for c in fmap.face_charts
        ],
    }
    if fmap.exterior is not None:
        e = fmap.exterior
        out["exterior"] = {"center": _pair(e.center), "radius": e.radius, "baseAngle": e.base_angle,
                           "alignment": {"a": _pair(e.alignment.a), "b": _pair(e.alignment.b)},
                           "boundary": list(e.boundary)}
    return out


def map_from_json(data: dict, cx: GluingComplex, pinned=None) -> StraighteningMap:
    """Rebuild a solved map for the complex it was solved from."""
    sym = ChristoffelSymbol.from_json(data["symbol"])
    problem = grid_problem(cx, pinned) if cx.grid is not None else triangle_problem(cx)
    if len(problem.residues) != len(sym) or not np.allclose(problem.residues, sym.residues, rtol=0, atol=1e-12):
        raise ValueError("stored map does not belong to this complex")

    def affine(d):
        return AffineMap(_unpair(d["a"]), _unpair(d["b"]))

    charts = [FaceChart(int(f["id"]), tuple(int(k) for k in f["poles"]), _unpair(f["basepoint"]),
                        affine(f["alignment"])) for f in data["faces"]]
    ext = None
    if "exterior" in data:
        e = data["exterior"]
        ext = ExteriorChart(_unpair(e["center"]), float(e["radius"]), float(e["baseAngle"]),
                            affine(e["alignment"]), tuple(int(k) for k in e["boundary"]))
    return StraighteningMap(sym, problem, cx, charts, ext, affine(data["post"]))
