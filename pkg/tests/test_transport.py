import cmath
import math

import numpy as np
import pytest

from beltrami_sc.christoffel import ChristoffelSymbol
from beltrami_sc.oracles import oracle_quadrature_transport
from beltrami_sc.transport import (
    NonIntegrableEndpointError,
    PathClearanceError,
    PolylinePath,
    develop_chart,
    parallel_transport,
    segment_log_integral,
    shoot_saddle_connection,
    trace_geodesic,
)


def test_path_construction():
    p = PolylinePath([0, 1, 1 + 1j])
    assert p.start == 0 and p.end == 1 + 1j
    assert p.length() == pytest.approx(2.0)
    assert p.reversed().vertices == (1 + 1j, 1, 0)
    assert p.then(PolylinePath([1 + 1j, 2j])).end == 2j
    loop = PolylinePath.square_loop(0, 1)
    assert loop.closed and loop.start == loop.end
    assert PolylinePath.from_json(loop.to_json()) == loop
    with pytest.raises(ValueError):
        PolylinePath([1, 1, 2])
    with pytest.raises(ValueError):
        PolylinePath([1])


def test_loop_integral_counts_windings():
    sym = ChristoffelSymbol([0j, 3 + 0j], [0.2 + 0.1j, -0.4])
    loop = PolylinePath.circle_loop(0, 1.0, sides=12)
    double = PolylinePath(list(loop.vertices) + list(loop.vertices[1:]))
    res = segment_log_integral(sym, double)
    assert abs(res.integral - 4j * math.pi * (0.2 + 0.1j)) < 1e-13
    assert res.winding == {0: 2}
    assert abs(res.holonomy_factor - cmath.exp(-4j * math.pi * (0.2 + 0.1j))) < 1e-12


def test_square_loop_holonomy():
    r = -0.3 + 0.05j
    sym = ChristoffelSymbol([0.1j], [r])
    hol = parallel_transport(sym, PolylinePath.square_loop(0.1j, 0.01), 1.0)
    assert abs(hol - cmath.exp(-2j * math.pi * r)) < 1e-12


def test_open_path_matches_simpson_oracle():
    rng = np.random.default_rng(2)
    sym = ChristoffelSymbol(rng.normal(size=6) + 1j * rng.normal(size=6), 0.3 * rng.normal(size=6) + 0.1j)
    path = PolylinePath([-3 - 3j, 3 - 2.5j, 3.1 + 3j])
    assert abs(segment_log_integral(sym, path).integral - oracle_quadrature_transport(sym, path)) < 1e-8


def test_path_through_pole_is_rejected():
    sym = ChristoffelSymbol([0.5], [0.2])
    with pytest.raises(PathClearanceError):
        segment_log_integral(sym, PolylinePath([0, 1]))


def test_developed_chart_of_single_pole():
    r = 0.4 - 0.2j
    sym = ChristoffelSymbol([0j], [r])
    path = PolylinePath([1, 1 + 1j, 2j])
    dev = develop_chart(sym, 1, 0, 1, path)
    # phi = (z^(r+1) - 1)/(r+1)
    expected = (cmath.exp((r + 1) * cmath.log(2j)) - 1) / (r + 1)
    assert abs(dev.end_value - expected) < 1e-13
    assert abs(dev.end_derivative - cmath.exp(r * cmath.log(2j))) < 1e-13
    assert abs(dev.extend(1.5j) - (cmath.exp((r + 1) * cmath.log(1.5j)) - 1) / (r + 1)) < 1e-13


def test_development_into_a_pole_rests_at_its_limit():
    r = -0.6 + 0.1j
    sym = ChristoffelSymbol([0j], [r])
    dev = develop_chart(sym, 1, 0, 1, PolylinePath([1, 0]))
    assert dev.terminal_pole == 0
    assert abs(dev.resting_place - (-1 / (r + 1))) < 1e-10
    with pytest.raises(ValueError):
        dev.end_derivative
    with pytest.raises(NonIntegrableEndpointError):
        develop_chart(ChristoffelSymbol([0j], [-1.2]), 1, 0, 1, PolylinePath([1, 0]))


def test_geodesics_without_curvature_are_straight():
    tr = trace_geodesic(ChristoffelSymbol.empty(), 0j, 1 + 1j, max_time=2.0)
    assert abs(tr.points[-1] - (2 + 2j)) < 1e-9
    sym = ChristoffelSymbol([0j], [0.5])
    radial = trace_geodesic(sym, 1 + 0j, 1 + 0j, max_time=1.0)
    assert np.max(np.abs(radial.points.imag)) < 1e-12
    rows = list(radial.to_csv_rows())
    assert rows[0] == (0.0, 1.0, 0.0)


def test_geodesic_into_pole_is_captured():
    sym = ChristoffelSymbol([0j, 5.0], [0.3, -0.3])
    tr = trace_geodesic(sym, 1 + 0j, -1 + 0j, max_time=10.0)
    assert tr.reason == "captured" and tr.captured_pole == 0


def test_saddle_connection_between_two_poles():
    sym = ChristoffelSymbol([-1 + 0j, 1 + 0j], [-0.25 + 0.05j, -0.25 - 0.05j])
    conn = shoot_saddle_connection(sym, 0, 0.0, 1, tol=1e-9)
    assert conn.miss < 1e-9
    assert abs(conn.path.end - 1) < 1e-12
