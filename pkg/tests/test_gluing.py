import cmath
import math

import numpy as np
import pytest

from beltrami_sc.fields import GridSpec, PiecewiseField, StripField, average_field
from beltrami_sc.gluing import (
    TAU,
    AffineMap,
    EdgePairing,
    GluingError,
    PlanarPolygon,
    build_grid_complex,
    corner_monodromy,
    local_model_chart,
    residue_of_cycle,
    triangle_fixture,
    triangle_vertex_order,
    vertex_cycles,
)
from beltrami_sc.oracles import oracle_quadrant_loop_factor

RES_A = 7 / 24 - 1 + math.log(math.sqrt(2)) / (2j * math.pi)
RES_B = 7 / 24 - 1 - math.log(math.sqrt(2)) / (2j * math.pi)
RES_C = -7 / 12


def test_affine_map_algebra():
    f = AffineMap(2j, 1)
    g = AffineMap(0.5, -1j)
    z = 0.3 - 0.4j
    assert abs(f.compose(g)(z) - f(g(z))) < 1e-15
    assert abs(f.inverse()(f(z)) - z) < 1e-15
    t = AffineMap.through(0, 1, 1j, 2j)
    assert abs(t(0) - 1j) < 1e-15 and abs(t(1) - 2j) < 1e-15
    with pytest.raises(GluingError):
        AffineMap(0, 1).inverse()


def test_triangle_residues_and_labels():
    cx = triangle_fixture()
    res = {c.label: c.residue for c in cx.cycles}
    assert abs(res["A"] - RES_A) < 1e-12
    assert abs(res["B"] - RES_B) < 1e-12
    assert abs(res["C"] - RES_C) < 1e-12
    assert abs(sum(res.values()) + 2) < 1e-12
    assert cx.euler_characteristic() == 2
    assert triangle_vertex_order(cx) == ["ABC", "BAC"]


def test_residue_formula():
    assert residue_of_cycle(TAU, 1.0) == pytest.approx(0)
    assert residue_of_cycle(TAU, 1.0, infinite=True) == pytest.approx(-2)
    with pytest.raises(GluingError):
        residue_of_cycle(1.0, 0.0)


def test_cycle_monodromy_round_trip_on_triangle():
    for c in triangle_fixture().cycles:
        assert abs(cmath.exp(2j * math.pi * c.residue) - c.monodromy_factor) < 1e-12


def test_open_and_doubly_paired_edges_are_rejected():
    sq = PlanarPolygon(0, (0j, 1, 1 + 1j, 1j))
    with pytest.raises(GluingError):
        vertex_cycles([sq], [EdgePairing((0, 0), (0, 2), AffineMap(1, 1j))])
    with pytest.raises(GluingError):
        vertex_cycles([sq], [EdgePairing((0, 0), (0, 2), AffineMap(1, 1j)),
                             EdgePairing((0, 0), (0, 1), AffineMap(1, 0))])
    with pytest.raises(GluingError):
        PlanarPolygon(1, (0j, 1))


def test_zero_field_complex_is_flat_sphere():
    cx = build_grid_complex(PiecewiseField(GridSpec(1.0, 3), np.zeros((3, 3), complex)))
    assert cx.euler_characteristic() == 2
    assert np.all(np.abs(cx.residues()) < 1e-15)
    inf = [c for c in cx.cycles if c.infinite]
    assert len(inf) == 1 and inf[0].residue == -2


def test_grid_corner_residues_match_corner_monodromy():
    rng = np.random.default_rng(5)
    m = 4
    vals = np.zeros((m, m), complex)
    vals[1:-1, 1:-1] = 0.3 * rng.uniform(0, 1, (2, 2)) * np.exp(2j * np.pi * rng.uniform(0, 1, (2, 2)))
    cx = build_grid_complex(PiecewiseField(GridSpec(1.0, m), vals))
    for r in range(1, m):
        for c in range(1, m):
            quad = (vals[r, c], vals[r, c - 1], vals[r - 1, c - 1], vals[r - 1, c])
            expected = corner_monodromy(*quad).residue
            got = cx.cycles[cx.corner_cycle[(r, c)]].residue
            assert abs(got - expected) < 1e-13


def test_corner_monodromy_against_unwrapped_loop():
    quad = (0.1 + 0.05j, -0.2j, 0.25, 0.1 - 0.3j)
    assert abs(corner_monodromy(*quad).factor - oracle_quadrant_loop_factor(*quad)) < 1e-9
    trivial = corner_monodromy(0.2, 0.2, 0.2, 0.2)
    assert abs(trivial.factor - 1) < 1e-15 and trivial.residue == 0


def test_strip_corners_have_zero_residue():
    cx = build_grid_complex(average_field(StripField(0.5, 0.5), GridSpec(1.0, 4)))
    m = 4
    for r in range(1, m):
        for c in range(1, m):
            assert abs(cx.cycles[cx.corner_cycle[(r, c)]].residue) < 1e-12


def test_random_compact_fields_have_balanced_residues():
    rng = np.random.default_rng(11)
    for _ in range(10):
        m = int(rng.integers(4, 9))
        vals = np.zeros((m, m), complex)
        k = m - 2
        vals[1:-1, 1:-1] = 0.5 * rng.uniform(0, 1, (k, k)) * np.exp(2j * np.pi * rng.uniform(0, 1, (k, k)))
        cx = build_grid_complex(PiecewiseField(GridSpec(1.0, m), vals))
        assert abs(cx.residues().sum()) < 1e-10


def test_local_model_chart_exponents():
    cx = triangle_fixture()
    for cyc in cx.cycles:
        chart = local_model_chart(cyc, cx.polygons, cx.pairings)
        assert abs(chart.alpha - (cyc.residue + 1)) < 1e-14
        assert abs(chart.closing_exponent * chart.alpha - 1) < 1e-14
        assert abs(abs(chart.closing_factor) - cyc.dilation) < 1e-12


def test_local_model_coordinate_closes_around_vertex():
    # the last sector continues into the first: log_developed differs by the closing data only
    cx = build_grid_complex(PiecewiseField(GridSpec(1.0, 2), np.array([[0.1, 0.2j], [-0.15, 0.05]])))
    cyc = cx.cycles[cx.corner_cycle[(1, 1)]]
    chart = local_model_chart(cyc, cx.polygons, cx.pairings)
    total = chart.start_angles[-1] + cx.polygons[cyc.flags[-1].polygon].sector_angle(cyc.flags[-1].vertex)
    assert abs(total - chart.start_angles[0] - cyc.total_angle) < 1e-12
