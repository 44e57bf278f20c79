import math

import numpy as np
import pytest

from beltrami_sc.christoffel import ChristoffelSymbol
from beltrami_sc.fields import BumpField, ConstantField, FunctionField, GridSpec
from beltrami_sc.limits import (
    InsufficientDataError,
    atomic_measure,
    density_samples,
    frame_connection,
    invert_map,
    lambda_expansion_check,
    limit_connection,
    limit_density,
    limit_symbol,
    nudged_segment,
    residue_density,
    transport_limit_compare,
    truncated_symbol,
    weak_pairing,
)
from beltrami_sc.oracles import oracle_area_integral


def test_density_vanishes_when_mu_depends_on_one_variable():
    for f in (FunctionField(lambda z: 0.3 * np.sin(z.real)), FunctionField(lambda z: 0.2j * z.imag ** 2),
              ConstantField(0.4 - 0.1j)):
        for c in (0j, 0.3 - 0.2j, -0.5 + 0.1j):
            assert abs(limit_density(f, c)) < 1e-6


def test_density_of_mixed_jet_is_exact():
    eps = 0.2
    jet = BumpField(eps, 0j, 1.0, "mixed")
    assert limit_density(jet, 0j) == -eps / math.pi
    assert residue_density(jet, 0j) == 1j * eps / math.pi


def test_density_from_differences_agrees_with_the_exact_jet():
    b = BumpField(0.3 - 0.1j, 0.1j, 1.0, "mixed")
    sampled = FunctionField(lambda z: b(z))
    c = 0.2 + 0.15j
    assert abs(limit_density(sampled, c) - limit_density(b, c)) < 1e-5


def test_lambda_expansion_defects_shrink():
    rows = lambda_expansion_check(BumpField(0.2, 0j, 1.0, "mixed"), 0j)
    defects = [r.defect for r in rows]
    assert all(a / b >= 1.5 for a, b in zip(defects, defects[1:]))
    assert rows[0].target == pytest.approx(-0.4)


def test_atomic_measure_pairs_like_the_density(bump_maps):
    fmap = bump_maps[16]
    atoms = atomic_measure(fmap)
    assert len(atoms) > 0
    bump = BumpField(0.3, 0j, 1.0)
    dens = density_samples(lambda z: residue_density(bump, z), fmap.grid)

    def test(z):
        return np.exp(-((z.real - 0.2) ** 2 + z.imag ** 2))

    a, d = weak_pairing(atoms, test), weak_pairing(dens, test)
    # both sides are tiny for a compactly supported bump; compare against the atom mass
    assert abs(a - d) < 0.2 * atoms.total_mass


def test_density_samples_integrate_polynomials():
    g = GridSpec(1.0, 3)
    s = density_samples(lambda z: z.real ** 2 * z.imag ** 2 + 1, g)
    exact = oracle_area_integral(lambda z: z.real ** 2 * z.imag ** 2 + 1, -1, 1, -1, 1)
    assert abs(weak_pairing(s, lambda z: 1.0) - exact) < 1e-4


def test_truncation_removes_only_nearby_poles():
    sym = ChristoffelSymbol([0j, 0.01, 1 + 1j, 2 + 0j], [0.1, 0.2, -0.1, -0.2])
    t = truncated_symbol(sym, 0j, 2 + 0j, 0.05)
    assert t.removed == (0, 1, 3)
    assert len(t.symbol) == 1
    with pytest.raises(ValueError):
        truncated_symbol(sym, 0j, 1 + 0j, 0.0)


def test_truncation_of_grid_symbol_drops_at_most_two_poles(bump_maps):
    for fmap in bump_maps.values():
        side = fmap.grid.cell_side * abs(fmap.post.a)
        t = truncated_symbol(fmap.symbol, -1.5 + 0.3j, 1.5 + 0.3j, side / 20)
        assert len(t.removed) <= 2


def test_nudged_segment_keeps_clearance():
    sym = ChristoffelSymbol([0.5 + 0j, 1.0 + 0.01j], [0.1, 0.1])
    path = nudged_segment(sym, 0j, 2 + 0j, 0.1)
    a, b = path.vertices
    assert abs((b - a) - 2) < 1e-15 and a.real == 0
    # the poles sit near the real axis, so the vertical offset is the clearance
    assert np.min(np.abs(np.array([0.0, 0.01]) - a.imag)) >= 0.1 - 1e-12


def test_frame_connection_is_affine_invariant():
    def f(z):
        return z + 0.1 * z * np.conj(z) ** 2 + 0.05j * np.conj(z)

    c = 0.3 - 0.2j
    base = frame_connection(f, c)
    a, b = 1.5 - 0.7j, 2 + 1j
    moved = frame_connection(lambda z: a * f(z) + b, c)
    # the connection is a 1-form in the image: it scales by 1/a
    assert abs(moved - base / a) < 1e-10
    assert abs(frame_connection(lambda z: z, c)) < 1e-12


def test_invert_map_round_trip():
    def f(z):
        return z + 0.1 * np.conj(z) ** 2

    c = invert_map(f, 0.5 + 0.2j, 0.4 + 0.2j)
    assert abs(f(c) - (0.5 + 0.2j)) < 1e-12


def test_limit_symbol_of_identity_is_cauchy_transform():
    b = BumpField(0.3, 0j, 1.0, "mixed")
    conn = limit_connection(lambda z: z, b, region=(-1.0, 1.0, -1.0, 1.0), n=32)
    z = 1.7 + 0.4j
    direct = oracle_area_integral(lambda s: residue_density(b, s) / (z - s), -1, 1, -1, 1, n=200)
    assert abs(limit_symbol(conn, z) - direct) < 1e-3 * max(abs(direct), 1e-3)


def test_limit_symbol_outside_partial_sample_is_refused():
    b = BumpField(0.3, 0j, 1.0, "mixed")
    conn = limit_connection(lambda z: z, b, region=(-0.5, 0.5, -0.5, 0.5), n=8)
    with pytest.raises(InsufficientDataError):
        limit_symbol(conn, 0.49 + 0.6j)


def test_transport_table_outside_the_support(bump_maps):
    conn = limit_connection(bump_maps[16], BumpField(0.3, 0j, 1.0), region=(-1.0, 1.0, -1.0, 1.0), n=24)
    rows = transport_limit_compare([bump_maps[4], bump_maps[8]], conn, -1.5 - 1.6j, 1.5 - 1.6j)
    assert [r.m for r in rows] == [4, 8]
    for r in rows:
        assert r.removed == 0
        assert r.defect < 0.1 * max(abs(r.limit), 1e-3) + 1e-3
