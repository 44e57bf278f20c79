import cmath
import math

import numpy as np
import pytest

from beltrami_sc.christoffel import ChristoffelSymbol
from beltrami_sc.gluing import corner_monodromy
from beltrami_sc.oracles import (
    OracleReport,
    oracle_cell_average,
    oracle_quadrant_loop_factor,
    oracle_quadrant_model,
    oracle_quadrature_transport,
    oracle_residue_recovery,
    oracle_strip_solution,
    strip_constants,
)
from beltrami_sc.transport import PolylinePath, segment_log_integral


def test_simpson_single_pole_loop_gives_residue_theorem():
    sym = ChristoffelSymbol([0j], [0.3 - 0.1j])
    loop = PolylinePath.square_loop(0j, 1.0)
    val = oracle_quadrature_transport(sym, loop, panels=10000)
    assert abs(val - 2j * math.pi * (0.3 - 0.1j)) < 1e-8


def test_simpson_segment_gives_log_two():
    sym = ChristoffelSymbol([0j], [0.7 + 0.2j])
    val = oracle_quadrature_transport(sym, PolylinePath([1, 2]))
    assert abs(val - (0.7 + 0.2j) * math.log(2)) < 1e-12


def test_simpson_matches_antiderivative_on_random_poles():
    rng = np.random.default_rng(3)
    pos = rng.uniform(-1, 1, 5) + 1j * rng.uniform(-1, 1, 5)
    res = rng.uniform(-0.5, 0.5, 5) + 1j * rng.uniform(-0.5, 0.5, 5)
    sym = ChristoffelSymbol(pos, res)
    path = PolylinePath([-2 - 2j, 2 - 1.5j, 2.2 + 2j, -1.8 + 2.1j])
    assert abs(oracle_quadrature_transport(sym, path) - segment_log_integral(sym, path).integral) < 1e-8


def test_residue_recovery_single_pole():
    sym = ChristoffelSymbol([0.5j], [-0.25 + 0.4j])
    assert abs(oracle_residue_recovery(sym, 0, 0.3) - (-0.25 + 0.4j)) < 1e-12


def test_residue_recovery_rejects_enclosed_pole():
    sym = ChristoffelSymbol([0j, 0.1], [0.1, 0.2])
    with pytest.raises(ValueError):
        oracle_residue_recovery(sym, 0, 0.5)


def test_quadrant_model_identity_and_constant():
    z = 0.3 + 0.7j
    assert abs(oracle_quadrant_model(0, 0, 0, 0, z) - z) < 1e-15
    c = 0.2 - 0.1j
    assert abs(oracle_quadrant_model(c, c, c, c, z) - (z + c * z.conjugate())) < 1e-14
    with pytest.raises(ValueError):
        oracle_quadrant_model(0, 0, 0, 0, 0)


def test_quadrant_loop_factor_matches_corner_monodromy():
    m = (0.1, 0.2, 0.3, 0.4)
    phase_unwrapped = oracle_quadrant_loop_factor(*m)
    assert abs(phase_unwrapped - corner_monodromy(*m).factor) < 1e-9


def test_strip_solution_increments():
    assert abs(oracle_strip_solution(0.5, 1.0) - oracle_strip_solution(0.5, 0.0) - 1) < 1e-15
    assert abs(oracle_strip_solution(0.5, 2.0) - oracle_strip_solution(0.5, 1.0) - 3) < 1e-15
    assert oracle_strip_solution(0.0, 1.3 + 0.2j) == 1.3 + 0.2j
    # average slope over many periods
    assert abs(oracle_strip_solution(0.5, 40.0).real / 40.0 - 2.0) < 1e-14


def test_strip_constants_for_half():
    c = strip_constants(0.5)
    assert c["K"] == pytest.approx(3.0, abs=1e-15)
    assert c["K_prime"] == pytest.approx(2.0, abs=1e-15)
    assert c["K_double_prime"] == pytest.approx(5 / 3, abs=1e-15)


def test_cell_average_of_polynomial():
    val = oracle_cell_average(lambda z: z.real ** 2 * z.imag, 0, 1, 0, 2)
    assert abs(val - 1 / 3) < 1e-13


def test_report_defects():
    rep = OracleReport("x", 2 + 0j, 2 + 1e-3j)
    assert rep.abs_defect == pytest.approx(1e-3)
    assert rep.rel_defect == pytest.approx(5e-4)
    assert cmath.isclose(rep.main, 2 + 1e-3j)
