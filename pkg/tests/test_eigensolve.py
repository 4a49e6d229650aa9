import math

import numpy as np
import pytest

from groundstate.eigensolve import (
    SolveOptions,
    check_comparison,
    principal_eigen,
    rayleigh_quotient,
    seed_profile,
    solve_dirichlet,
    weighted_eigen,
)
from groundstate.errors import PreconditionError
from groundstate.functional import OperatorSpec, Problem, equation_residual
from groundstate.grid import DIRICHLET, NATURAL, POLE, Field, make_geometric_grid, make_grid

from oracles import dirichlet_shooting, lambda_closed_form, lambda_shooting


def test_shooting_oracle_agrees_with_closed_form():
    for p in (1.5, 2.0, 3.0):
        assert lambda_shooting(p) == pytest.approx(lambda_closed_form(p), rel=1e-8)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0, 4.0])
def test_principal_eigenvalue_on_unit_interval(p):
    g = make_grid(0.0, 1.0, 256)
    res = principal_eigen(OperatorSpec(p, 0.0, g))
    assert res.converged
    assert res.lambda_ == pytest.approx(lambda_shooting(p), rel=2e-3)
    assert res.eigenfunction.is_positive_interior()
    assert all(b <= a + 1e-12 * abs(a) for a, b in zip(res.history, res.history[1:]))


def test_eigenvalue_scales_with_length():
    g = make_grid(0.0, 2.0, 256)
    lam = principal_eigen(OperatorSpec(2.0, 0.0, g)).lambda_
    assert lam == pytest.approx(math.pi**2 / 4, rel=1e-4)


def test_constant_potential_shifts_eigenvalue():
    g = make_grid(0.0, 1.0, 256)
    lam0 = principal_eigen(OperatorSpec(2.0, 0.0, g)).lambda_
    lam1 = principal_eigen(OperatorSpec(2.0, 5.0, g)).lambda_
    assert lam1 - lam0 == pytest.approx(5.0, rel=1e-8)


def test_ball_eigenvalue_in_three_dimensions():
    # first Dirichlet eigenvalue of the unit ball in R^3 is pi^2 (u = sin(pi r)/r)
    g = make_grid(0.0, 1.0, 400, d=3)
    assert g.left_bc == POLE
    lam = principal_eigen(OperatorSpec(2.0, 0.0, g)).lambda_
    assert lam == pytest.approx(math.pi**2, rel=1e-3)


def test_negative_eigenvalue_is_reported():
    g = make_grid(0.0, 1.0, 128)
    lam = principal_eigen(OperatorSpec(2.0, -20.0, g)).lambda_
    assert lam == pytest.approx(math.pi**2 - 20.0, rel=1e-3)


def test_weighted_eigen_window_normalization():
    g = make_grid(0.0, 1.0, 200)
    spec = OperatorSpec(2.0, 0.0, g)
    full = weighted_eigen(spec)
    part = weighted_eigen(spec, window=(0.25, 0.75))
    assert part.lambda_ > full.lambda_
    from groundstate.grid import lp_norm_p

    assert lp_norm_p(part.eigenfunction, 2.0, (0.25, 0.75)) == pytest.approx(1.0, rel=1e-10)


def test_rayleigh_quotient_needs_dirichlet_zero():
    g = make_grid(0.0, 1.0, 8)
    with pytest.raises(Exception):
        rayleigh_quotient(OperatorSpec(2.0, 0.0, g), Field(g, np.ones(9)))


def test_principal_eigen_refuses_natural_boundaries():
    g = make_grid(0.0, 1.0, 8, right_bc=NATURAL)
    with pytest.raises(PreconditionError):
        principal_eigen(OperatorSpec(2.0, 0.0, g))


def test_seed_profiles():
    g = make_geometric_grid(1e-3, 1e3, 40)
    s = seed_profile(g)
    assert s[0] == 0 and s[-1] == 0 and np.all(s[1:-1] > 0)
    with pytest.raises(ValueError):
        seed_profile(g, "sideways")


def test_dirichlet_p2_closed_form():
    g = make_grid(0.0, 1.0, 64)
    u = solve_dirichlet(OperatorSpec(2.0, 0.0, g), Field(g, np.ones(65)))
    x = g.nodes
    assert np.allclose(u.values, x * (1 - x) / 2, atol=1e-12)  # P1 is nodally exact here


def test_dirichlet_p3_against_shooting():
    V = lambda x: 1.0 + x
    g = make_grid(0.0, 1.0, 400)
    spec = OperatorSpec(3.0, V, g)
    u = solve_dirichlet(spec, Field(g, np.ones(g.n_nodes)))
    xs, ref = dirichlet_shooting(3.0, V, lambda x: 1.0)
    assert np.max(np.abs(u.at(xs) - ref)) <= 2e-3 * np.max(ref)
    assert equation_residual(spec, u) < 1.0  # nonzero: the load is not in the residual


def test_dirichlet_with_boundary_data_and_comparison():
    g = make_grid(0.0, 1.0, 50)
    spec = OperatorSpec(2.5, 1.0, g)
    lo = solve_dirichlet(spec, Field.zeros(g), boundary_values=(1.0, 1.0))
    hi = solve_dirichlet(spec, Field(g, np.ones(51)), boundary_values=(2.0, 1.0))
    assert lo.values[0] == 1.0 and np.all(lo.values > 0)
    assert check_comparison(spec, lo, hi)
    assert not check_comparison(spec, hi, lo)


def test_dirichlet_refuses_bad_inputs():
    g = make_grid(0.0, 1.0, 10)
    spec = OperatorSpec(2.0, 0.0, g)
    with pytest.raises(PreconditionError):
        solve_dirichlet(spec, Field(g, -np.ones(11)))
    with pytest.raises(PreconditionError):
        solve_dirichlet(spec, Field(g, np.ones(11)), lambda1=-1.0)
    assert np.all(solve_dirichlet(spec, Field.zeros(g)).values == 0)


def test_solve_options_validation():
    with pytest.raises(ValueError):
        SolveOptions(eps_factor=1.5)
    assert SolveOptions().eps_schedule(1.0)[-1] == SolveOptions().eps_final


def test_geometric_grid_eigen_with_pole():
    # V = 0 on the annulus (1, 2) in R^3: u = sin(pi (r - 1)) / r, lambda = pi^2
    g = make_geometric_grid(1.0, 2.0, 300, 3, DIRICHLET, DIRICHLET)
    lam = principal_eigen(Problem(2.0, 0.0).on(g)).lambda_
    assert lam == pytest.approx(math.pi**2, rel=1e-3)
