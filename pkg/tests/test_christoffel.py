import cmath
import json

import numpy as np
import pytest

from beltrami_sc.christoffel import (
    INVERSION,
    ChristoffelSymbol,
    PoleProximityError,
    UnsupportedResidueError,
    curvature_form,
    evaluate,
    n_operator,
    normal_form_from_laurent,
    normal_form_series,
    pullback,
    residue_sum_defect,
)
from beltrami_sc.gluing import AffineMap

sympy = pytest.importorskip("sympy")


def _sym():
    return ChristoffelSymbol([0j, 1 + 1j, -0.5 + 2j], [0.3 - 0.1j, -0.2, 0.15j])


def test_evaluation_and_residue_sum():
    sym = _sym()
    z = 0.4 - 0.7j
    direct = sum(r / (z - p) for p, r in zip(sym.positions, sym.residues))
    assert abs(sym(z) - direct) < 1e-15
    assert abs(residue_sum_defect(sym)) < 1e-15
    assert evaluate(ChristoffelSymbol.empty(), 1j) == 0
    with pytest.raises(PoleProximityError):
        sym(1 + 1j)


def test_json_round_trip_and_editing():
    sym = _sym()
    back = ChristoffelSymbol.from_json(json.loads(sym.dumps()))
    np.testing.assert_array_equal(back.positions, sym.positions)
    np.testing.assert_array_equal(back.residues, sym.residues)
    assert back.infinity_residue == sym.infinity_residue
    assert len(sym.without([1])) == 2
    zeroed = ChristoffelSymbol([0j, 1], [0.1, 0])
    assert len(zeroed.active()) == 1


def test_n_operator_of_power_chart():
    # phi = z^alpha has phi''/phi' = (alpha - 1)/z
    alpha = 0.7 + 0.2j
    z = 1.3 + 0.4j
    # five-point stencils at step 1e-4: rounding in the second difference dominates
    assert abs(n_operator(lambda w: cmath.exp(alpha * cmath.log(w)), z) - (alpha - 1) / z) < 1e-6


def test_affine_pullback_moves_poles():
    sym = _sym()
    psi = AffineMap(2 - 1j, 0.5)
    back = pullback(sym, psi)
    w = 0.3 + 0.2j
    # zeta2(w) = psi' zeta1(psi(w))
    assert abs(back(w) - psi.a * sym(psi(w))) < 1e-13


def test_inversion_pullback_swaps_zero_and_infinity():
    sym = ChristoffelSymbol([0j, 2.0], [0.25, -0.5])
    inv = pullback(sym, INVERSION)
    w = 0.3 - 0.1j
    # psi(w) = 1/w: psi' = -1/w^2, psi''/psi' = -2/w
    expected = -sym(1 / w) / w**2 - 2 / w
    assert abs(inv(w) - expected) < 1e-13
    assert abs(inv.infinity_residue - 0.25) < 1e-15
    assert abs(residue_sum_defect(inv)) < 1e-14


def _sympy_normal_form(res, regular, order):
    u = sympy.symbols("u")
    alpha = res + 1
    a = sum(c * u ** (k + 1) / (k + 1) for k, c in enumerate(regular))
    b = sympy.series(sympy.exp(a), u, 0, order + 1).removeO()
    s = sum(b.coeff(u, n) * alpha / (alpha + n) * u**n for n in range(order + 1))
    w = u * sympy.series(s ** (1 / alpha), u, 0, order).removeO()
    poly = sympy.Poly(sympy.expand(w), u)
    return [complex(poly.coeff_monomial(u ** (n + 1))) for n in range(order)]


def test_normal_form_coefficients_match_symbolic_series():
    res = sympy.Rational(1, 3)
    regular = [sympy.Rational(1, 2), sympy.Rational(-1, 5), sympy.Rational(1, 7)]
    expected = _sympy_normal_form(res, regular, 5)
    nf = normal_form_from_laurent(complex(res), np.array([float(c) for c in regular]), order=5)
    np.testing.assert_allclose(nf.coeffs, expected, atol=1e-12)


def test_normal_form_turns_symbol_into_pure_pole():
    sym = _sym()
    nf = normal_form_series(sym, 0, order=12)
    # pulling back res/w through w(z) must reproduce zeta near the pole
    for z in (0.02 + 0.01j, -0.015 + 0.02j):
        w, dw = complex(nf(z)), complex(nf.derivative(z))
        h = 1e-5
        d2w = (complex(nf.derivative(z + h)) - complex(nf.derivative(z - h))) / (2 * h)
        model = sym.residues[0] * dw / w + d2w / dw
        assert abs(model - sym(z)) < 1e-8


def test_normal_form_rejects_integer_poles():
    with pytest.raises(UnsupportedResidueError):
        normal_form_from_laurent(-1 + 0j, np.zeros(4))
    with pytest.raises(UnsupportedResidueError):
        normal_form_from_laurent(-3 + 0j, np.zeros(4))


def test_curvature_of_holomorphic_samples_is_second_order_small():
    errors = []
    for n in (21, 41, 81):
        x = np.linspace(0.5, 1.5, n)
        zz = x[None, :] + 1j * x[:, None]
        errors.append(abs(curvature_form(1 / zz, x[1] - x[0])[n // 2, n // 2]))
    assert errors[0] / errors[1] > 3.9 and errors[1] / errors[2] > 3.9
    x = np.linspace(0.5, 1.5, 21)
    zz = x[None, :] + 1j * x[:, None]
    # zbar has d/dzbar = 1
    np.testing.assert_allclose(curvature_form(np.conj(zz), x[1] - x[0]), 1.0, atol=1e-12)
