import numpy as np
import pytest

import constants

from hypothesis import given, settings, strategies as st

from energy import Variant, make_problem
from errors import BadParams, NotConverged, TooManyVertices
from generate import path
from solver import (Minimizer, SolverOptions, brute_force_oracle, clarkson_margin,
                    convexity_suite, data_range, minimize, multi_start_analysis, scaling_check,
                    require_converged)
from space import build_space, mean


@pytest.fixture
def path5():
    return build_space(path(5))


@pytest.fixture
def dipole_problem(path4_dipole):
    return make_problem(path4_dipole, 2.0, 1.0, 2.0)


def test_oracle_finds_the_dipole_minimum(path4_dipole, dipole_problem):
    oracle = brute_force_oracle(path4_dipole, dipole_problem, -1.2, 1.2, 0.1)

    assert oracle.dof == 3
    assert oracle.points == 25 ** 3
    assert oracle.value == pytest.approx(-2.9, abs=1e-9)
    assert oracle.argmin.values == pytest.approx([-0.9, -0.3, 0.3, 0.9], abs=1e-9)
    assert oracle.resolution > 0


def test_minimizer_matches_the_oracle(path4_dipole, dipole_problem):
    result = minimize(path4_dipole, dipole_problem, SolverOptions(starts=2, seed=1))

    assert result.converged
    assert result.value == pytest.approx(-2.9, abs=1e-6)
    assert result.u.values == pytest.approx([-0.9, -0.3, 0.3, 0.9], abs=1e-4)
    assert abs(mean(path4_dipole, result.u, path4_dipole.interior)) < 1e-12


# Closed-form minima of the dipole paths with p = gamma = 2, c = 1: on path(3) the
# ends sit at -+1, on path(4) at -+0.9, on path(5) at -+5/6 around (-1/3, 0, 1/3)
@pytest.mark.parametrize("n, lo, hi, step, expected", [
    (3, -1.2, 1.2, 0.1, -2.0),
    (4, -1.2, 1.2, 0.1, -2.9),
    (5, -1.0, 1.0, 1 / 12, -23 / 6),
])
def test_minimizer_agrees_with_the_oracle(n, lo, hi, step, expected):
    space = build_space(path(n, profile="dipole"))
    problem = make_problem(space, 2.0, 1.0, 2.0)

    oracle = brute_force_oracle(space, problem, lo, hi, step)
    result = minimize(space, problem, SolverOptions(starts=2, seed=3))

    assert space.interior.sum() <= 3
    assert oracle.value == pytest.approx(expected, abs=1e-9)
    assert abs(result.value - oracle.value) <= max(1e-6, oracle.resolution)
    assert result.value <= oracle.value + 1e-8


def test_oracle_limits(grid3, path4_dipole, dipole_problem):
    with pytest.raises(TooManyVertices):
        brute_force_oracle(grid3, make_problem(grid3, 2.0, 1.0, 2.0), -1, 1, 0.5)
    with pytest.raises(BadParams):
        brute_force_oracle(path4_dipole, dipole_problem, -1, 1, 0.0)


def test_zero_data_minimum_is_minus_c_mu(path5):
    problem = make_problem(path5, 2.0, 1.5, 2.0)
    result = minimize(path5, problem, SolverOptions(starts=3, seed=2))

    assert result.value == pytest.approx(-1.5 * path5.domain_measure, abs=1e-9)
    assert np.abs(result.u.values).max() < 1e-6


def test_history_is_non_increasing(path4_dipole, dipole_problem):
    result = Minimizer(path4_dipole, dipole_problem, SolverOptions(record_iterates=True)).run(0)

    assert len(result.history) >= 2
    assert np.all(np.diff(result.history) <= 1e-12)
    assert result.iterates
    for x in result.iterates:
        assert abs(mean(path4_dipole, x, path4_dipole.interior)) < 1e-9


def test_minimize_is_deterministic(grid3_dipole):
    problem = make_problem(grid3_dipole, 2.5, 1.0, 3.0)
    options = SolverOptions(starts=3, seed=5)

    first = minimize(grid3_dipole, problem, options)
    second = minimize(grid3_dipole, problem, options)

    assert first.start == second.start
    assert np.array_equal(first.u.values, second.u.values)


def test_start_values(path4_dipole, dipole_problem):
    minimizer = Minimizer(path4_dipole, dipole_problem, SolverOptions(seed=4))

    assert not minimizer.start_values(0).any()
    assert np.array_equal(minimizer.start_values(2), minimizer.start_values(2))
    assert not np.array_equal(minimizer.start_values(1), minimizer.start_values(2))


def test_data_range(path4, path4_dipole, dipole_problem):
    assert data_range(path4_dipole, dipole_problem) == 2.0
    assert data_range(path4, make_problem(path4, 2.0, 1.0, 2.0)) == 1.0


@pytest.mark.parametrize("options", [
    {"tol": 0.0}, {"starts": 0}, {"eps_decay": 1.0}, {"eps0": 1e-7}, {"max_iters": 0},
    {"learning_rate": 0.1},
])
def test_solver_options_rejected(options):
    with pytest.raises(BadParams):
        SolverOptions.from_dict(options)


def test_uniqueness_on_zero_data(path5):
    problem = make_problem(path5, 2.0, 1.0, 2.0)
    report = multi_start_analysis(path5, problem, SolverOptions(starts=3, seed=1))

    assert report.starts == 3
    assert report.midpoints_ok
    assert report.best_value == pytest.approx(-path5.domain_measure, abs=1e-9)
    assert report.value_spread < 1e-6


def test_midpoint_tolerance_follows_the_stall_tolerance(path5):
    options = SolverOptions(starts=2, seed=1)
    report = multi_start_analysis(path5, make_problem(path5, 2.0, 1.0, 2.0), options)

    assert report.midpoint_tolerance == 2 * options.tol * max(1.0, abs(report.best_value))
    assert report.midpoint_excess <= report.midpoint_tolerance


@pytest.mark.slow
def test_uniqueness_on_the_dipole_grid(grid5_dipole):
    problem = make_problem(grid5_dipole, 2.0, 1.0, 2.0)
    report = multi_start_analysis(grid5_dipole, problem, SolverOptions(starts=8, seed=0))

    assert report.starts == 8
    assert report.gradient_spread <= constants.UNIQUENESS_GRADIENT_TOL
    assert report.data_spread <= constants.UNIQUENESS_DATA_TOL
    assert report.midpoints_ok


def test_uniqueness_needs_two_starts(path5):
    with pytest.raises(BadParams):
        multi_start_analysis(path5, make_problem(path5, 2.0, 1.0, 2.0), SolverOptions(starts=1))


@pytest.mark.parametrize("variant", list(Variant))
def test_convexity_suite(grid3_dipole, variant):
    report = convexity_suite(grid3_dipole, make_problem(grid3_dipole, 2.0, 1.0, 3.0), 200, 0, variant)

    assert report.jensen_probes == 200
    assert report.jensen_violations == 0
    assert report.clarkson_probes == 200
    assert report.clarkson_violations == 0


def test_convexity_suite_skips_clarkson_below_two(grid3_dipole):
    report = convexity_suite(grid3_dipole, make_problem(grid3_dipole, 1.5, 1.0, 2.0), 50)

    assert report.jensen_violations == 0
    assert report.clarkson_probes == 0


def test_clarkson_margin_examples():
    assert clarkson_margin(1.0, 1.0, 3.0) == 0.0
    assert clarkson_margin(1.0, 0.0, 3.0) == pytest.approx(0.25)
    assert clarkson_margin(3.0, 1.0, 2.0) == pytest.approx(0.0)


@settings(max_examples=100)
@given(st.floats(min_value=0, max_value=10), st.floats(min_value=0, max_value=10),
       st.floats(min_value=2, max_value=6))
def test_clarkson_margin_nonnegative(a, b, p):
    assert clarkson_margin(a, b, p) >= -1e-9 * max(1.0, (a ** p + b ** p) / 2)


def test_scaling_shifts_by_c_mu(path4_dipole, dipole_problem):
    report = scaling_check(path4_dipole, dipole_problem, SolverOptions(seed=0))

    assert report.expected_shift == pytest.approx(-2.0)
    assert report.shift == pytest.approx(report.expected_shift, abs=1e-4)
    assert report.argmin_gap < 0.05


def test_require_converged(path4_dipole, dipole_problem):
    cut = minimize(path4_dipole, dipole_problem, SolverOptions(max_iters=1))
    assert not cut.converged
    with pytest.raises(NotConverged):
        require_converged(cut)

    full = minimize(path4_dipole, dipole_problem, SolverOptions(starts=2, seed=1))
    assert require_converged(full) is full


def test_refine_lowers_the_energy(grid3_dipole):
    problem = make_problem(grid3_dipole, 2.0, 1.0, 2.0)
    minimizer = Minimizer(grid3_dipole, problem, SolverOptions(refine=False, max_iters=50))
    rough = minimizer.run(0)

    x, value = minimizer.refine(rough.u.values)

    assert value <= rough.value
    assert value == minimizer.energy.value(x)
    assert abs(mean(grid3_dipole, x, grid3_dipole.interior)) < 1e-12
    assert value == pytest.approx(minimize(grid3_dipole, problem).value, abs=1e-7)


def test_refine_only_improves_the_descent(grid3_dipole):
    problem = make_problem(grid3_dipole, 2.5, 1.0, 3.0)

    plain = minimize(grid3_dipole, problem, SolverOptions(refine=False))
    refined = minimize(grid3_dipole, problem, SolverOptions(refine=True))

    assert refined.value <= plain.value
    assert np.all(np.diff(refined.history) <= 1e-12)


def test_refine_skips_large_spaces(grid3_dipole, monkeypatch):
    problem = make_problem(grid3_dipole, 2.0, 1.0, 2.0)
    minimizer = Minimizer(grid3_dipole, problem)
    x = minimizer.project(np.random.default_rng(0).normal(size=grid3_dipole.n))

    monkeypatch.setattr(constants, "REFINE_MAX_VARS", 0)
    same, value = minimizer.refine(x)

    assert same is x
    assert value == minimizer.energy.value(x)
