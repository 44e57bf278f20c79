import json

import numpy as np
import pytest

from beltrami_sc.gluing import AffineMap, build_grid_complex
from beltrami_sc.uniformize import (
    INFINITY,
    SolverOptions,
    edges_disjoint,
    evaluate_straightening,
    grid_problem,
    map_from_json,
    map_to_json,
    normalize,
    per_map,
    post_compose,
    residual_vector,
    skeleton,
    solve_parameter_problem,
)

from conftest import single_cell_field


def _beltrami_ratio(f, z, h=1e-5):
    fx = (f(z + h) - f(z - h)) / (2 * h)
    fy = (f(z + 1j * h) - f(z - 1j * h)) / (2 * h)
    fz = 0.5 * (fx - 1j * fy)
    fzb = 0.5 * (fx + 1j * fy)
    return fzb / fz


def test_options_from_json():
    opts = SolverOptions.from_json({"tol": 1e-9, "maxIter": 7, "continuationSteps": 2, "pinned": [[0, 0], [1, 2]]})
    assert (opts.tol, opts.max_iter, opts.continuation_steps) == (1e-9, 7, 2)
    assert opts.pinned == ((0, 0), (1, 2))
    with pytest.raises(ValueError):
        SolverOptions.from_json({"tol": -1})


def test_triangle_solution(triangle_map):
    pos = triangle_map.symbol.positions
    assert abs(pos[0] + 1) < 1e-15 and abs(pos[1] - 1) < 1e-15
    for face, mapped in zip(triangle_map.problem.faces, per_map(triangle_map.symbol, triangle_map.problem)):
        assert np.max(np.abs(np.asarray(mapped) - face.normalized)) < 1e-12


def test_zero_field_is_identity(zero_map):
    assert zero_map.report.iterations == 0
    rng = np.random.default_rng(0)
    z = rng.uniform(-1.5, 1.5, 20) + 1j * rng.uniform(-1.5, 1.5, 20)
    assert np.max(np.abs(evaluate_straightening(zero_map, z) - z)) < 1e-12


def test_single_cell_solution(single_cell_map):
    f = single_cell_map
    assert f.report.final_residual < 1e-8
    grid = f.grid
    corners = np.array([grid.corner(r, c) for r in range(4) for c in range(4)])
    np.testing.assert_allclose(evaluate_straightening(f, corners), f.symbol.positions, atol=1e-10)
    assert abs(f(0j)) < 1e-12 and abs(f(1 + 0j) - 1) < 1e-12


def test_map_solves_the_beltrami_equation_cellwise(single_cell_map):
    f = single_cell_map
    assert abs(_beltrami_ratio(f, 0.1 - 0.2j) - 0.2j) < 1e-5
    assert abs(_beltrami_ratio(f, -1.0 + 0.9j)) < 1e-5
    assert abs(_beltrami_ratio(f, 2.3 - 1.9j)) < 1e-5


def test_post_compose_commutes_with_evaluation(single_cell_map):
    t = AffineMap(0.5 - 2j, 1 + 1j)
    g = post_compose(single_cell_map, t)
    z = np.array([0.3 + 0.1j, -1.2 + 0.4j, 3 + 3j])
    np.testing.assert_allclose(g(z), t(single_cell_map(z)), atol=1e-12)
    np.testing.assert_allclose(normalize(g)(z), single_cell_map(z), atol=1e-12)


def test_pinning_choice_does_not_change_the_normalized_map():
    pw = single_cell_field(0.15 - 0.1j)
    a = normalize(solve_parameter_problem(build_grid_complex(pw)))
    b = normalize(solve_parameter_problem(build_grid_complex(pw), SolverOptions(pinned=((1, 1), (3, 2)))))
    np.testing.assert_allclose(a.symbol.positions, b.symbol.positions, atol=1e-9)


def test_finite_difference_jacobian_reaches_the_same_solution():
    pw = single_cell_field(0.1j)
    a = solve_parameter_problem(build_grid_complex(pw))
    b = solve_parameter_problem(build_grid_complex(pw), SolverOptions(jacobian="fd"))
    np.testing.assert_allclose(a.symbol.positions, b.symbol.positions, atol=1e-8)


def test_analytic_jacobian_matches_differences():
    cx = build_grid_complex(single_cell_field(0.2j))
    prob = grid_problem(cx)
    pos = prob.initial_positions.copy()
    pos[5] += 0.01 + 0.02j
    _, jac = residual_vector(prob, pos, jacobian=True)
    free = prob.free
    h = 1e-6
    k = 3
    step = pos.copy()
    step[free[k]] += h
    back = pos.copy()
    back[free[k]] -= h
    fd = (residual_vector(prob, step)[0] - residual_vector(prob, back)[0]) / (2 * h)
    # residuals are holomorphic in the pole positions
    assert np.max(np.abs(fd - jac[:, free[k]])) < 1e-6


def test_map_json_round_trip(single_cell_map):
    data = json.loads(json.dumps(map_to_json(single_cell_map)))
    back = map_from_json(data, single_cell_map.complex)
    z = np.array([0.1 + 0.2j, -0.7 + 0.5j, 2 + 2j])
    assert np.max(np.abs(back(z) - single_cell_map(z))) == 0
    with pytest.raises(ValueError):
        map_from_json(data, build_grid_complex(single_cell_field(0.1)))


def test_skeleton_of_single_cell(single_cell_map):
    shot = skeleton(single_cell_map)
    assert not shot.failures
    assert len(shot.edges) == 24
    assert edges_disjoint(shot.edges)
    pos = single_cell_map.symbol.positions
    for (a, b), pts in shot.edges.items():
        assert abs(pts[0] - pos[a]) < 1e-12 and abs(pts[-1] - pos[b]) < 1e-12
    evaluated = skeleton(single_cell_map, "evaluate", samples=65)
    for key, pts in shot.edges.items():
        gap = np.abs(np.asarray(evaluated.edges[key])[:, None] - pts[None, :]).min(axis=1).max()
        assert gap < 5e-3


def test_triangle_skeleton(triangle_map):
    sk = skeleton(triangle_map)
    assert not sk.failures
    assert set(sk.edges) == {(0, 1), (0, INFINITY), (1, INFINITY)}
    assert len(sk.faces) == 2
    assert edges_disjoint(sk.edges)
