"""Command-line front end: one scenario file, one pipeline stage per subcommand.

Stages hand off through files in the output directory, so ``solve`` can
be run once and ``eval``, ``trace`` or ``render`` reuse its ``map.json``.

Exit codes: 0 success, 1 failed invariant, 2 invalid scenario or
arguments, 3 a pipeline stage raised.
"""

from __future__ import annotations

import argparse
import cmath
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .christoffel import residue_sum_defect
from .fields import FieldError, field_to_json
from .gluing import GluingError
from .limits import (
    lambda_expansion_check,
    limit_connection,
    residue_density,
    transport_limit_compare,
)
from .oracles import oracle_quadrature_transport
from .render import RenderStyle, render_svg
from .scenario import Scenario, ScenarioError, load_scenario
from .transport import (
    NoConnectionError,
    PathClearanceError,
    PolylinePath,
    scene_diameter,
    segment_log_integral,
    trace_geodesic,
)
from .uniformize import (
    NewtonError,
    SolverError,
    StraighteningMap,
    edges_disjoint,
    evaluate_straightening,
    map_from_json,
    map_to_json,
    normalize,
    per_map,
    skeleton,
    solve_parameter_problem,
)

__all__ = ["main", "build_parser", "StageError", "run_verify"]

log = logging.getLogger("beltrami_sc")

EXIT_OK, EXIT_INVARIANT, EXIT_SCENARIO, EXIT_STAGE = 0, 1, 2, 3


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException) -> None:
        super().__init__(f"{stage}: {cause}")
        self.stage = stage


# ---------------------------------------------------------------- output helpers


def _num(x: float) -> str:
    return "%.17g" % x


def write_atomic(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, data) -> None:
    write_atomic(path, json.dumps(data, indent=1, sort_keys=True, allow_nan=True) + "\n")


def write_csv(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_num(v) if isinstance(v, float) else v for v in row])
    write_atomic(path, buf.getvalue())


def _pair(z: complex) -> list[float]:
    return [float(z.real), float(z.imag)]


@dataclass
class Context:
    scenario: Scenario
    out: Path
    manifest: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def emit_json(self, name: str, data) -> None:
        write_json(self.out / name, data)
        self.manifest.append(name)

    def emit_csv(self, name: str, header, rows) -> None:
        write_csv(self.out / name, header, rows)
        self.manifest.append(name)

    def emit_text(self, name: str, text: str) -> None:
        write_atomic(self.out / name, text)
        self.manifest.append(name)

    def stage(self, name: str, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except (SolverError, NewtonError, GluingError, FieldError, PathClearanceError,
                NoConnectionError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 6)
            log.info("%s took %.3f s", name, self.timings[name])


# ---------------------------------------------------------------- pipeline pieces


def _solve(ctx: Context) -> StraighteningMap:
    scen = ctx.scenario
    cx = ctx.stage("glue", scen.gluing_complex)
    fmap = ctx.stage("solve", solve_parameter_problem, cx, scen.solver)
    if not scen.is_triangle:
        fmap = ctx.stage("normalize", normalize, fmap)
    return fmap


def _load_or_solve(ctx: Context) -> StraighteningMap:
    path = ctx.out / "map.json"
    if path.exists():
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            cx = ctx.scenario.gluing_complex()
            fmap = map_from_json(data, cx, ctx.scenario.solver.pinned)
            log.info("reusing %s", path)
            return fmap
        except (ValueError, KeyError, TypeError) as exc:
            log.info("ignoring stale %s (%s)", path, exc)
    return _solve(ctx)


def _probe_points(scen: Scenario) -> np.ndarray:
    rng = np.random.default_rng(scen.seed)
    if scen.grid is None:
        half, center = 2.0, 0j
    else:
        half, center = scen.grid.half_width, scen.grid.origin
    pts = rng.uniform(-half, half, (scen.probes, 2))
    return center + pts[:, 0] + 1j * pts[:, 1]


def _probe_segment(scen: Scenario) -> tuple[complex, complex]:
    seg = scen.limits.get("segment")
    if seg is not None:
        return complex(*seg[0]), complex(*seg[1])
    half = scen.grid.half_width if scen.grid is not None else 1.5
    return complex(-0.75 * half, 0.15 * half), complex(0.75 * half, 0.15 * half)


def _limit_point(scen: Scenario) -> complex:
    pt = scen.limits.get("point")
    if pt is not None:
        return complex(*pt)
    spec = scen.field_spec
    if spec["kind"] == "bump":
        c = spec.get("center", 0.0)
        c = complex(*c) if isinstance(c, list) else complex(c)
        return c + 0.3 * float(spec.get("radius", 1.0)) * (1 + 0.5j)
    return 0.1 + 0.05j


def _has_smooth_field(scen: Scenario) -> bool:
    return scen.kind in ("zero", "constant", "bump")


# ---------------------------------------------------------------- commands


def cmd_discretize(ctx: Context) -> int:
    """Average the field over the grid cells and write field.json."""
    pw = ctx.stage("discretize", ctx.scenario.piecewise)
    ctx.emit_json("field.json", field_to_json(pw))
    return EXIT_OK


def cmd_glue(ctx: Context) -> int:
    """Build the glued polygon complex and write complex.json."""
    cx = ctx.stage("glue", ctx.scenario.gluing_complex)
    ctx.emit_json("complex.json", cx.to_json())
    return EXIT_OK


def cmd_solve(ctx: Context) -> int:
    """Solve for the pole positions; write the symbol, map, poles table and solve report."""
    fmap = _solve(ctx)
    sym = fmap.symbol
    ctx.emit_json("symbol.json", sym.to_json())
    ctx.emit_json("map.json", map_to_json(fmap))
    ctx.emit_csv("poles.csv", ["index", "label", "re_z", "im_z", "re_res", "im_res"],
                 ([k, fmap.problem.labels[k], float(p.real), float(p.imag), float(r.real), float(r.imag)]
                  for k, (p, r) in enumerate(zip(sym.positions, sym.residues))))
    report = {
        "poles": [_pair(p) for p in sym.positions],
        "residues": [_pair(r) for r in sym.residues],
        **fmap.report.to_json(include_timings=False),
        "timings": {**fmap.report.timings, **ctx.timings},
    }
    ctx.emit_json("solve_report.json", report)
    return EXIT_OK


def cmd_eval(ctx: Context) -> int:
    """Evaluate the straightening map at seeded random probe points."""
    if ctx.scenario.is_triangle:
        raise ScenarioError("the triangle fixture has no source plane to evaluate on")
    fmap = _load_or_solve(ctx)
    pts = _probe_points(ctx.scenario)
    vals = ctx.stage("eval", evaluate_straightening, fmap, pts) if len(pts) else np.zeros(0, complex)
    ctx.emit_csv("probes.csv", ["re_z", "im_z", "re_f", "im_f"],
                 ([float(z.real), float(z.imag), float(w.real), float(w.imag)] for z, w in zip(pts, np.atleast_1d(vals))))
    return EXIT_OK


def cmd_trace(ctx: Context) -> int:
    """Trace geodesics of the solved symbol from the scenario start points."""
    fmap = _load_or_solve(ctx)
    sym = fmap.symbol
    specs = ctx.scenario.geodesics or [{"start": [0.05, 0.1], "direction": [1.0, 0.2]}]
    diam = scene_diameter(sym)
    summary = []
    for k, g in enumerate(specs):
        z0, v0 = complex(*g["start"]), complex(*g["direction"])
        tr = ctx.stage(f"trace{k}", trace_geodesic, sym, z0, v0 / abs(v0), float(g.get("time", diam)))
        name = f"geodesic_{k}.csv"
        ctx.emit_csv(name, ["t", "re_z", "im_z"], tr.to_csv_rows())
        summary.append({"file": name, "reason": tr.reason, "captured": tr.captured_pole})
    ctx.emit_json("geodesics.json", summary)
    return EXIT_OK


def cmd_transport(ctx: Context) -> int:
    """Integrate the symbol along the probe segment, with a Simpson cross-check."""
    fmap = _load_or_solve(ctx)
    a, b = _probe_segment(ctx.scenario)
    path = PolylinePath([a, b])
    main = ctx.stage("transport", segment_log_integral, fmap.symbol, path)
    ref = ctx.stage("transport-oracle", oracle_quadrature_transport, fmap.symbol, path)
    ctx.emit_csv("transport.csv", ["quantity", "re", "im"], [
        ["integral", float(main.integral.real), float(main.integral.imag)],
        ["holonomy", float(main.holonomy_factor.real), float(main.holonomy_factor.imag)],
        ["simpson", float(ref.real), float(ref.imag)],
    ])
    return EXIT_OK


def _lambda_rows(scen: Scenario):
    c = _limit_point(scen)
    rows = lambda_expansion_check(scen.build_field(), c, tuple(scen.limits.get("eps", (0.1, 0.05, 0.025))))
    return c, rows


def _transport_rows(ctx: Context, fmap: StraighteningMap):
    scen = ctx.scenario
    refinements = scen.limits.get("refinements")
    if not refinements or not _has_smooth_field(scen):
        return None
    fld = scen.build_field()
    maps = []
    for m in refinements:
        sub = Scenario(scen.field_spec, type(scen.grid)(scen.grid.half_width, int(m), scen.grid.origin),
                       scen.solver, transform=scen.transform, base_dir=scen.base_dir)
        if m == scen.grid.m:
            maps.append(fmap)
        else:
            maps.append(ctx.stage(f"solve{m}", lambda s=sub: normalize(solve_parameter_problem(s.gluing_complex(), s.solver))))
    conn = ctx.stage("limit-connection", limit_connection, maps[-1], fld, None, int(scen.limits.get("n", 32)))
    a, b = _probe_segment(scen)
    return ctx.stage("transport-limit", transport_limit_compare, maps, conn, a, b)


def cmd_limits(ctx: Context) -> int:
    """Write the corner expansion table, residue density and transport-limit table."""
    scen = ctx.scenario
    if not _has_smooth_field(scen):
        raise ScenarioError("limit quantities need a zero, constant or bump field")
    fld = scen.build_field()
    c, rows = ctx.stage("lambda-expansion", _lambda_rows, scen)
    ctx.emit_csv("lambda_expansion.csv", ["eps", "re_scaled", "im_scaled", "re_target", "im_target", "defect"],
                 ([r.eps, float(r.scaled.real), float(r.scaled.imag), float(r.target.real),
                   float(r.target.imag), r.defect] for r in rows))
    grid = scen.grid
    centers = [grid.cell_center(r, k) for r in range(grid.m) for k in range(grid.m)]
    dens = ctx.stage("density", lambda: [residue_density(fld, z) for z in centers])
    ctx.emit_json("residue_density.json", {"grid": grid.to_json(), "values": [_pair(d) for d in dens]})
    if scen.limits.get("refinements"):
        fmap = _load_or_solve(ctx)
        table = _transport_rows(ctx, fmap)
        ctx.emit_csv("transport_limit.csv", ["refinement", "removed", "defect", "runtime_ms"],
                     ([r.m, r.removed, r.defect, float(r.runtime_ms)] for r in table))
    return EXIT_OK


def _skeleton_for(ctx: Context, fmap: StraighteningMap):
    method = ctx.scenario.raw.get("skeleton", "shoot")
    if method not in ("shoot", "evaluate"):
        raise ScenarioError("skeleton must be shoot or evaluate")
    return ctx.stage("skeleton", skeleton, fmap, method)


def cmd_render(ctx: Context) -> int:
    """Draw the skeleton, poles and image grid as SVG."""
    fmap = _load_or_solve(ctx)
    sk = _skeleton_for(ctx, fmap)
    style = RenderStyle(**ctx.scenario.raw.get("style", {}))
    svg = ctx.stage("render", render_svg, fmap, sk, fmap.grid is not None, style)
    ctx.emit_text("skeleton.svg", svg)
    return EXIT_OK


# ---------------------------------------------------------------- verify


@dataclass
class Check:
    name: str
    value: float
    threshold: float
    passed: bool
    note: str = ""


def _face_defect(fmap: StraighteningMap) -> float:
    worst = 0.0
    for face, mapped in zip(fmap.problem.faces, per_map(fmap.symbol, fmap.problem)):
        worst = max(worst, float(np.max(np.abs(np.asarray(mapped) - face.normalized))))
    return worst


def run_verify(ctx: Context) -> list[Check]:
    scen = ctx.scenario
    checks: list[Check] = []

    def add(name, value, threshold, note="", le=True):
        value = float(value)
        ok = math.isfinite(value) and (value <= threshold if le else value >= threshold)
        checks.append(Check(name, value, threshold, ok, note))

    cx = ctx.stage("glue", scen.gluing_complex)
    worst_cycle = max((abs(cmath.exp(2j * math.pi * c.residue) - c.monodromy_factor)
                       for c in cx.cycles if c.flags), default=0.0)
    add("cycle_monodromy", worst_cycle, 1e-12)

    fmap = _solve(ctx)
    sym = fmap.symbol
    add("residue_sum", abs(residue_sum_defect(sym)), 1e-10)
    add("solver_residual", fmap.report.final_residual, 1e-8)
    add("per_glu", ctx.stage("per-map", _face_defect, fmap), 1e-7)

    rng = np.random.default_rng(scen.seed)
    active = np.flatnonzero(sym.residues != 0)
    picks = rng.choice(active, size=min(8, len(active)), replace=False) if len(active) else []
    worst_hol = 0.0
    pos = np.asarray(sym.positions)
    for k in sorted(int(p) for p in picks):
        gaps = np.abs(pos - pos[k])
        gaps[k] = np.inf
        h = 0.25 * float(gaps.min()) if len(pos) > 1 else 0.25
        loop = PolylinePath.square_loop(pos[k], h)
        hol = segment_log_integral(sym, loop).holonomy_factor
        worst_hol = max(worst_hol, abs(hol - cmath.exp(-2j * math.pi * sym.residues[k])))
    add("loop_holonomy", worst_hol, 1e-8, f"{len(picks)} poles")

    if "skeleton" in scen.outputs:
        sk = _skeleton_for(ctx, fmap)
        add("skeleton_failures", len(sk.failures), 0)
        add("skeleton_disjoint", 0.0 if edges_disjoint(sk.edges) else 1.0, 0)

    if _has_smooth_field(scen) and not scen.is_triangle:
        _, rows = ctx.stage("lambda-expansion", _lambda_rows, scen)
        defects = [r.defect for r in rows]
        if max(defects) < 1e-9:
            add("lambda_expansion", max(defects), 1e-9, "field is flat at the probe")
        else:
            ratio = min(a / b if b > 0 else math.inf for a, b in zip(defects, defects[1:]))
            add("lambda_expansion_ratio", ratio, 1.5, le=False)
        table = _transport_rows(ctx, fmap)
        if table:
            first, last = table[0].defect, table[-1].defect
            add("transport_limit_trend", last - first, 0.0, f"defects {first:.3e} -> {last:.3e}")
    return checks


def cmd_verify(ctx: Context) -> int:
    """Run the invariant battery; exit 1 if any check fails."""
    checks = run_verify(ctx)
    ctx.emit_csv("verify.csv", ["check", "value", "threshold", "pass", "note"],
                 ([c.name, c.value, float(c.threshold), "pass" if c.passed else "FAIL", c.note] for c in checks))
    ok = all(c.passed for c in checks)
    report = {
        "scenario": ctx.scenario.raw,
        "checks": [{"name": c.name, "value": c.value, "threshold": c.threshold, "passed": c.passed}
                   for c in checks],
        "passed": ok,
        "outputs": sorted(set(ctx.manifest) | {"verify_report.json"}),
    }
    ctx.emit_json("verify_report.json", report)
    for c in checks:
        log.info("%-24s %s value=%.3e threshold=%g", c.name, "pass" if c.passed else "FAIL", c.value, c.threshold)
    return EXIT_OK if ok else EXIT_INVARIANT


COMMANDS = {
    "discretize": cmd_discretize,
    "glue": cmd_glue,
    "solve": cmd_solve,
    "eval": cmd_eval,
    "trace": cmd_trace,
    "transport": cmd_transport,
    "limits": cmd_limits,
    "render": cmd_render,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beltrami-sc", description="Straighten Beltrami fields by gluing similarity squares.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=(fn.__doc__ or name).strip().splitlines()[0])
        p.add_argument("--scenario", required=True, type=Path, help="scenario JSON file")
        p.add_argument("--out", type=Path, default=Path("out"), help="output directory (default: out)")
        p.add_argument("--threads", type=int, default=None, help="worker threads for residual evaluation")
        p.add_argument("--verbose", action="store_true", help="log stage progress to stderr")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCENARIO if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        scen = load_scenario(args.scenario)
        if args.threads is not None:
            if args.threads < 1:
                raise ScenarioError("--threads must be at least 1")
            scen.solver.threads = args.threads
        ctx = Context(scen, args.out)
        return COMMANDS[args.command](ctx)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except StageError as exc:
        print(f"error in stage {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
