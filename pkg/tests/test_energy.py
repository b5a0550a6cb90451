import math

import numpy as np
import pytest

from hypothesis import given, settings, strategies as st

from calculus import ScalarField
from energy import (Energy, ReactionParams, Variant, check_radii, competitor, cutoff, energy_J,
                    energy_gradient, lower_bounds, make_problem, problem_from_dict, load_problem,
                    reaction_value, truncation)
from errors import (BadExponent, BadParams, BadRadii, EnergyError, NotMeanZero, UnbalancedData)
from generate import grid
from space import Support, build_space, mean


def mean_zero(space, values):
    values = np.where(space.closure, np.asarray(values, dtype=float), 0.0)
    return values - mean(space, values, space.interior) * space.closure


def test_energy_of_a_simple_field(path4):
    problem = make_problem(path4, 2.0, 1.0, 2.0)
    u = ScalarField(np.array([0.0, 1.0, -1.0, 0.0]), Support.CLOSURE)

    assert energy_J(path4, u, problem) == pytest.approx(8.0)
    assert energy_gradient(path4, u).values == pytest.approx([0.0, 2.0, 2.0, 0.0])


def test_energy_of_zero_is_minus_c_mu(grid3):
    problem = make_problem(grid3, 3.0, 0.7, 2.5)
    assert energy_J(grid3, np.zeros(grid3.n), problem) == pytest.approx(-0.7 * grid3.domain_measure)


def test_dipole_energy_parts(path4_dipole):
    problem = make_problem(path4_dipole, 2.0, 1.0, 2.0)
    u = np.array([-0.9, -0.3, 0.3, 0.9])

    parts = Energy(path4_dipole, problem).parts(u)

    assert parts["gradient"] == pytest.approx(0.72)
    assert parts["reaction"] == pytest.approx(1.82)
    assert parts["boundary"] == pytest.approx(-1.8)
    assert parts["value"] == pytest.approx(-2.9)


def test_variants_differ_by_the_boundary_term(grid3_dipole):
    problem = make_problem(grid3_dipole, 2.0, 1.0, 3.0)
    rng = np.random.default_rng(0)

    for _ in range(10):
        u = mean_zero(grid3_dipole, rng.normal(size=grid3_dipole.n))
        J = energy_J(grid3_dipole, u, problem)
        I = energy_J(grid3_dipole, u, problem, Variant.I)
        J_minus = energy_J(grid3_dipole, u, problem, Variant.J_MINUS)

        assert J + J_minus == pytest.approx(2 * I)


def test_mean_zero_is_required(path4):
    problem = make_problem(path4, 2.0, 1.0, 2.0)
    with pytest.raises(NotMeanZero):
        energy_J(path4, np.array([0.0, 1.0, 1.0, 0.0]), problem)


def test_value_batch_matches_value(grid3_dipole):
    problem = make_problem(grid3_dipole, 2.5, 1.0, 3.0)
    energy = Energy(grid3_dipole, problem)
    batch = np.random.default_rng(1).normal(size=(7, grid3_dipole.n)) * grid3_dipole.closure

    assert energy.value_batch(batch) == pytest.approx([energy.value(row) for row in batch])


def test_smoothed_energy(grid3_dipole):
    problem = make_problem(grid3_dipole, 2.5, 1.0, 3.0)
    energy = Energy(grid3_dipole, problem)
    rng = np.random.default_rng(6)
    x = mean_zero(grid3_dipole, rng.normal(size=grid3_dipole.n))
    eps, h = 0.2, 1e-6

    value, grad = energy.smoothed(x, eps)
    assert value >= energy.value(x) - 1e-12
    assert not grad[~grid3_dipole.closure].any()

    for k in np.flatnonzero(grid3_dipole.closure):
        e = np.zeros(grid3_dipole.n)
        e[k] = h
        numeric = (energy.smoothed(x + e, eps)[0] - energy.smoothed(x - e, eps)[0]) / (2 * h)
        assert grad[k] == pytest.approx(numeric, abs=1e-5)


@pytest.mark.parametrize("p, c, gamma, error", [
    (1.0, 1.0, 2.0, BadExponent),
    (math.inf, 1.0, 2.0, BadExponent),
    (2.0, 1.0, 1.0, BadExponent),
    (2.0, 0.0, 2.0, EnergyError),
    (2.0, -1.0, 2.0, EnergyError),
])
def test_make_problem_rejects_parameters(path4, p, c, gamma, error):
    with pytest.raises(error):
        make_problem(path4, p, c, gamma)


def test_make_problem_rejects_data(path4):
    with pytest.raises(UnbalancedData):
        make_problem(path4, 2.0, 1.0, 2.0, f={"v0": 1.0})
    with pytest.raises(UnbalancedData):
        make_problem(path4, 2.0, 1.0, 2.0, f={"v1": 1.0})
    with pytest.raises(UnbalancedData):
        make_problem(path4, 2.0, 1.0, 2.0, f=[1.0, 0.0])
    with pytest.raises(BadExponent):
        make_problem(path4, 2.0, 1.0, 2.0, q=0.5)


def test_make_problem_reads_data_from_the_space(path4_dipole):
    problem = make_problem(path4_dipole, 2.0, 1.0, 2.0)
    assert problem.f.tolist() == [1.0, 0.0, 0.0, -1.0]

    problem = make_problem(path4_dipole, 2.0, 1.0, 2.0, f=[2.0, 5.0, 5.0, -2.0])
    assert problem.f.tolist() == [2.0, 0.0, 0.0, -2.0]


def test_problem_from_dict(path4, tmp_path):
    problem = problem_from_dict(path4, {"p": 2, "c": 1, "gamma": 3, "q": "inf"})
    assert problem.q == math.inf and problem.reaction.gamma == 3.0

    with pytest.raises(BadParams):
        problem_from_dict(path4, {"p": 2, "c": 1, "gamma": 3, "lambda": 1})
    with pytest.raises(BadParams):
        problem_from_dict(path4, {"p": 2, "c": 1})

    target = tmp_path / "problem.json"
    target.write_text('{"p": 3, "c": 0.5, "gamma": 2, "q": 2, "f": {"v0": 1, "v3": -1}}')
    problem = load_problem(path4, str(target))
    assert problem.to_dict(path4) == {"p": 3.0, "c": 0.5, "gamma": 2.0, "q": 2.0,
                                      "f": {"v0": 1.0, "v3": -1.0}}


@pytest.mark.parametrize("c, gamma", [(1.0, 2.0), (0.5, 3.0), (2.0, 1.5)])
def test_reaction_value(c, gamma):
    params = ReactionParams(c, gamma)
    t = np.linspace(-3.0, 3.0, 13)

    assert reaction_value(0.0, params) == c
    assert reaction_value(1.0, params) == reaction_value(-1.0, params) == c - 1
    np.testing.assert_allclose(reaction_value(t, params), reaction_value(-t, params))
    assert reaction_value(2.0, params) == pytest.approx(c - 2 ** gamma)


def test_energy_uses_the_reaction(path4_dipole):
    problem = make_problem(path4_dipole, 2.0, 1.0, 3.0)
    u = mean_zero(path4_dipole, [0.5, -0.25, 0.25, -0.5])

    parts = Energy(path4_dipole, problem).parts(u)
    inside = path4_dipole.interior
    assert parts["reaction"] == pytest.approx(
        float(path4_dipole.mu[inside] @ (1.0 - np.abs(u[inside]) ** 3)))


def test_reaction_exponent_check():
    ReactionParams(1.0, 3.0).check(math.inf)
    ReactionParams(1.0, 5.9).check(6.0)

    with pytest.raises(BadExponent):
        ReactionParams(1.0, 6.0).check(6.0)


def test_boundary_exponent_admissibility(path4):
    assert make_problem(path4, 3.0, 1.0, 2.0, q=1.0).q_admissible(2.0) == (1.0, True)

    threshold, ok = make_problem(path4, 2.0, 1.0, 2.0).q_admissible(3.0)
    assert threshold == pytest.approx(4 / 3) and ok
    assert not make_problem(path4, 2.0, 1.0, 2.0, q=1.0).q_admissible(3.0)[1]


@settings(max_examples=30, deadline=None)
@given(st.floats(min_value=1.1, max_value=5.0), st.floats(min_value=0.0, max_value=10.0),
       st.floats(min_value=0.0, max_value=20.0))
def test_explicit_floor_is_the_minimum_of_the_holder_curve(p, K_T, t):
    space = build_space(grid(2, profile="dipole"))
    bounds = lower_bounds(space, make_problem(space, p, 1.0, 2.0), K_T)

    assert bounds.holder_curve(t) >= bounds.explicit_floor - 1e-9 * max(1.0, abs(bounds.explicit_floor))


def test_lower_bound_parts(grid3_dipole):
    bounds = lower_bounds(grid3_dipole, make_problem(grid3_dipole, 2.0, 2.0, 2.0), 1.5)

    assert bounds.f_norm == pytest.approx(1.0)
    assert bounds.constant == pytest.approx(2.0 * grid3_dipole.domain_measure)
    # p = 2: the floor is -(K_T |f| / 2)^2 - c mu
    assert bounds.explicit_floor == pytest.approx(-(0.75 ** 2) - bounds.constant)


def test_truncation(path4):
    v = truncation(path4, np.array([-1.0, 0.5, 2.0, 3.0]), 1.0)
    assert v.values.tolist() == [0.0, 0.0, 1.0, 2.0]


def test_radii_checks(grid3):
    check_radii(grid3, 0.02, 0.05)
    check_radii(grid3, 0.5, 1.0, relax=True)

    with pytest.raises(BadRadii):
        check_radii(grid3, 0.5, 1.0)
    with pytest.raises(BadRadii):
        check_radii(grid3, 0.3, 0.3, relax=True)


def test_cutoff(grid3):
    y = grid3.vertex("b0_2")
    tau = cutoff(grid3, y, 0.25, 0.75)

    assert np.all((tau >= 0) & (tau <= 1))
    assert np.all(tau[grid3.dist[y] <= 0.25] == 1.0)
    assert not tau[grid3.dist[y] >= 0.75].any()


@pytest.mark.parametrize("alpha", [0.0, 0.2, -0.3])
def test_competitor(grid3_dipole, alpha):
    space = grid3_dipole
    u = mean_zero(space, np.random.default_rng(8).normal(size=space.n))
    y = space.vertex("b0_2")
    rho, R = 0.25, 0.75

    bundle = competitor(space, u, "b0_2", rho, R, alpha, 2.0, relax=True)
    w = bundle.w.values

    outside = space.closure & (space.dist[y] > R)
    assert w[outside] == pytest.approx(u[outside])
    inside = space.closure & (space.dist[y] <= rho)
    assert w[inside] == pytest.approx(np.minimum(u[inside], alpha))

    assert np.all(bundle.g_w.values ** 2 <= bundle.g_w_bound.values + 1e-12)
    assert not (bundle.level_set & ~space.interior).any()
    assert not (bundle.level_set_rho & ~bundle.level_set).any()
    assert np.all(u[bundle.boundary_part] > alpha)

    if alpha >= 0:
        assert bundle.abs_bound_holds
    else:
        assert bundle.abs_bound_holds is None


def test_competitor_centre_must_be_on_the_boundary(grid3):
    with pytest.raises(EnergyError):
        competitor(grid3, np.zeros(grid3.n), "i2_2", 0.25, 0.5, 0.0, relax=True)
