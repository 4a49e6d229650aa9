import math

import numpy as np
import pytest
from scipy.optimize import brentq

from groundstate.criticality import DEGENERATELY_POSITIVE, NONPOSITIVE, STRICTLY_POSITIVE, Thresholds, classify
from groundstate.eigensolve import principal_eigen
from groundstate.errors import PreconditionError
from groundstate.functional import Problem
from groundstate.grid import Exhaustion, Field, GridPolicy, make_grid
from groundstate.perturb import (
    PerturbationSetup,
    classify_along_segment,
    cross_validate_intcond,
    domain_monotonicity_check,
    find_tau_plus,
    integral_condition,
    intcond_table,
    probe_tau_minus,
    segment_potential,
    sweep_table,
    tau_plus_eigen,
)


def chi(c, lo, hi):
    return lambda x: np.where((x > lo) & (x < hi), c, 0.0)


def smooth_bump(c, lo, hi):
    def V(x):
        t = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
        return c * np.where((x > lo) & (x < hi), (4.0 * t * (1.0 - t)) ** 2, 0.0)

    return V


def interval_exhaustion(density=256, jmax=6):
    # (1/s, 1 - 1/s) for s = 2^2 .. 2^jmax, then (0, 1) itself
    scales = [2.0**j for j in range(2, jmax + 1)]
    levels = [(1.0 / s, 1.0 - 1.0 / s) for s in scales] + [(0.0, 1.0)]
    return Exhaustion(tuple(levels), GridPolicy(density=density), (0.4, 0.6), tuple(scales) + (2.0 * scales[-1],), True)


def hardy_exhaustion(jmax=12):
    return Exhaustion.dyadic(lambda N: (1.0 / N, N), [2.0**j for j in range(3, jmax + 1)], GridPolicy(kind="geometric", density=32), (1.0, 2.0))


def hardy(c):
    return lambda x: -c / x**2


@pytest.fixture(scope="module")
def interval_setup():
    return PerturbationSetup(Problem(2.0, 0.0), chi(-1.0, 0.4, 0.6), (0.4, 0.6), interval_exhaustion(), (0.4, 0.6))


def test_setup_rejects_support_touching_a_level():
    ex = interval_exhaustion()
    with pytest.raises(PreconditionError):
        PerturbationSetup(Problem(2.0, 0.0), chi(-1.0, 0.1, 0.6), (0.1, 0.6), ex, (0.4, 0.6))


def test_setup_rejects_V0_leaking_outside_support():
    ex = interval_exhaustion()
    with pytest.raises(PreconditionError):
        PerturbationSetup(Problem(2.0, 0.0), chi(-1.0, 0.3, 0.7), (0.4, 0.6), ex, (0.4, 0.6))


def test_perturbed_adds_scaled_V0(interval_setup):
    x = np.array([0.2, 0.5, 0.9])
    V = interval_setup.perturbed(3.0).potential(x)
    assert np.allclose(V, [0.0, -3.0, 0.0])


def test_tau_eigen_halves_when_V0_doubles(interval_setup):
    t1 = tau_plus_eigen(interval_setup)
    t2 = tau_plus_eigen(interval_setup.with_V0(chi(-2.0, 0.4, 0.6)))
    assert t1 is not None and t2 is not None
    assert t2 == pytest.approx(0.5 * t1, rel=1e-9)


def test_tau_eigen_is_none_for_a_nonnegative_perturbation(interval_setup):
    assert tau_plus_eigen(interval_setup.with_V0(chi(1.0, 0.4, 0.6)), bracket_max=64.0) is None


def test_tau_bisection_matches_eigen_root(interval_setup):
    res = find_tau_plus(interval_setup, bisection_tol=1e-5)
    ref = tau_plus_eigen(interval_setup)
    assert res.tau is not None
    assert res.lower < ref <= res.upper * (1.0 + 1e-9)
    assert abs(res.tau - ref) / ref <= 1e-3
    assert res.to_record()["tau_plus"] == res.tau


def test_tau_refuses_a_critical_base():
    setup = PerturbationSetup(Problem(2.0, hardy(0.25)), smooth_bump(-1.0, 1.0, 2.0), (0.9, 2.1), hardy_exhaustion(), (1.0, 2.0))
    with pytest.raises(PreconditionError):
        find_tau_plus(setup)


def test_segment_potential_interpolates():
    x = np.linspace(0.0, 1.0, 5)
    V = segment_potential(lambda x: np.ones_like(x), lambda x: 3.0 * np.ones_like(x), 0.25)
    assert np.allclose(V(x), 1.5)


def test_segment_between_strict_potentials_stays_strict(interval_setup):
    pts = classify_along_segment(interval_setup, 0.0, chi(-5.0, 0.4, 0.6), [0.0, 0.5, 1.0])
    assert [p.verdict.tag for p in pts] == [STRICTLY_POSITIVE] * 3
    lams = [p.lambda_ for p in pts]
    assert lams[0] > lams[1] > lams[2] > 0.0


def test_segment_rejects_nonpositive_endpoint(interval_setup):
    with pytest.raises(PreconditionError):
        classify_along_segment(interval_setup, 0.0, chi(-100.0, 0.4, 0.6), [0.5])


def test_segment_rejects_parameter_outside_unit_interval(interval_setup):
    with pytest.raises(ValueError):
        classify_along_segment(interval_setup, 0.0, chi(-1.0, 0.4, 0.6), [1.5])


def test_integral_condition_closed_form():
    g = make_grid(0.0, 1.0, 512)
    v = Field.from_function(g, lambda x: x)
    # int_0^1 x^2 dx and int_0^{1/2} 2 x^3 dx
    assert integral_condition(v, lambda x: np.ones_like(x), p=2.0) == pytest.approx(1.0 / 3.0, rel=1e-12)
    assert integral_condition(v, lambda x: 2.0 * np.ones_like(x), (0.0, 0.5), p=3.0) == pytest.approx(1.0 / 32.0, rel=1e-12)
    with pytest.raises(PreconditionError):
        integral_condition(v, lambda x: x, (0.5, 2.0))


def test_intcond_sign_predicts_verdict():
    setup = PerturbationSetup(Problem(2.0, hardy(0.25)), smooth_bump(1.0, 1.0, 2.0), (0.9, 2.1), hardy_exhaustion(16), (1.0, 2.0))
    bumps = [
        ("+bump", smooth_bump(1.0, 1.0, 2.0), (0.9, 2.1)),
        ("-bump", smooth_bump(-4.0, 1.0, 2.0), (0.9, 2.1)),
        ("zero-mean", lambda x: smooth_bump(1.0, 1.0, 2.0)(x) * 0.0, (0.9, 2.1)),
    ]
    rows = cross_validate_intcond(setup, bumps)
    assert rows[0].I > 0.0 and rows[0].agree is True
    assert rows[1].I < 0.0 and rows[1].agree is True
    assert rows[2].agree is None and rows[2].predicted == "outside hypothesis"
    table = intcond_table(rows)
    assert table.splitlines()[0] == "bump,I,predicted,verdicts,agree"
    assert len(table.splitlines()) == 4


def test_intcond_requires_critical_base(interval_setup):
    with pytest.raises(PreconditionError):
        cross_validate_intcond(interval_setup, [("b", chi(-1.0, 0.4, 0.6), (0.4, 0.6))])


def test_domain_monotonicity_for_critical_hardy():
    problem = Problem(2.0, hardy(0.25))
    outer = hardy_exhaustion(12)
    # half line (1/N, N) against the subdomain (1/N, 4): strict on the smaller one
    scales = [2.0**j for j in range(3, 13)]
    inner = Exhaustion(tuple((1.0 / s, 4.0) for s in scales[:-1]) + ((0.0, 4.0),), GridPolicy(kind="geometric", density=32, left_bc="dirichlet"), (1.0, 2.0), tuple(scales))
    rep = domain_monotonicity_check(
        problem,
        (outer, (1.0, 2.0)),
        (inner.truncate(len(scales) - 1), (1.0, 2.0)),
        (0.0, math.inf),
        (0.0, 4.0),
        bump=(smooth_bump(1.0, 1.0, 2.0), (1.0, 2.0)),
    )
    verdicts = {e["check"]: e["verdict"] for e in rep.entries}
    assert verdicts["outer"] == DEGENERATELY_POSITIVE
    assert verdicts["domain"] == STRICTLY_POSITIVE
    assert verdicts["potential"] == STRICTLY_POSITIVE
    assert rep.ok


def test_domain_monotonicity_skips_equal_domains(interval_setup):
    ex = interval_setup.exhaustion
    rep = domain_monotonicity_check(Problem(2.0, 0.0), (ex, (0.4, 0.6)), (ex, (0.4, 0.6)), (0.0, 1.0), (0.0, 1.0))
    assert rep.entries[1]["ok"] is None and "skipped" in rep.entries[1]["note"]


def test_domain_monotonicity_rejects_negative_bump(interval_setup):
    ex = interval_setup.exhaustion
    with pytest.raises(PreconditionError):
        domain_monotonicity_check(Problem(2.0, 0.0), (ex, (0.4, 0.6)), (ex, (0.4, 0.6)), (0.0, 1.0), (0.0, 1.0), bump=(chi(-1.0, 0.4, 0.6), (0.4, 0.6)))


def test_sweep_table_columns(interval_setup):
    v = interval_setup.classify()
    table = sweep_table([(0.0, v), (0.5, v)], bounded=True).splitlines()
    assert table[0] == "t,verdict,c_limit,lambda"
    assert table[1].split(",")[1] == STRICTLY_POSITIVE
    assert float(table[1].split(",")[3]) == pytest.approx(math.pi**2, rel=1e-3)
    unbounded = sweep_table([(0.0, v)]).splitlines()
    assert unbounded[1].split(",")[3] == ""


def test_nonpositive_after_large_perturbation(interval_setup):
    v = interval_setup.classify(interval_setup.perturbed(200.0))
    assert v.tag == NONPOSITIVE


def test_tau_bracket_brackets_the_sign_change(interval_setup):
    tol = 1e-4
    res = find_tau_plus(interval_setup, bisection_tol=tol)
    delta = 2.0 * tol * res.tau
    assert interval_setup.classify(interval_setup.perturbed(res.tau - delta)).tag == STRICTLY_POSITIVE
    assert interval_setup.classify(interval_setup.perturbed(res.tau + delta)).tag == NONPOSITIVE


def test_tau_minus_probe_reports_an_open_end(interval_setup):
    res = probe_tau_minus(interval_setup, bracket_max=16.0)
    assert res.tau is None
    assert res.message.startswith("unbounded below not excluded")


def test_tau_minus_probe_finds_a_finite_end(interval_setup):
    # V0 changes sign, so large negative t also drives positivity away
    V0 = lambda x: chi(-1.0, 0.4, 0.5)(x) + chi(1.0, 0.5, 0.6)(x)
    setup = interval_setup.with_V0(V0)
    res = probe_tau_minus(setup, bracket_max=1e3, bisection_tol=1e-5)
    g = setup.exhaustion.grid(len(setup.exhaustion) - 1)
    ref = brentq(lambda t: principal_eigen(setup.perturbed(t).on(g)).lambda_, -1e3, -1.0, xtol=1e-10)
    assert res.tau == pytest.approx(ref, rel=1e-3)
    assert res.lower <= ref <= res.upper


def test_eigenvalue_is_concave_along_a_segment(interval_setup):
    ts = np.linspace(0.0, 1.0, 6)
    pts = classify_along_segment(interval_setup, 0.0, lambda x: 3.0 * np.sin(8.0 * x) - 2.0, ts)
    lam = np.array([p.lambda_ for p in pts])
    assert np.all(lam >= ts * lam[-1] + (1.0 - ts) * lam[0] - 1e-8)


def critical_bump_shift(x):
    # w = sqrt(x) exp(0.3 sin^2(pi (x - 1))) on (1, 2) solves -w'' + V w = 0 for V = w''/w, so V is critical on (0, inf)
    d1 = np.where((x > 1.0) & (x < 2.0), 0.3 * np.pi * np.sin(2.0 * np.pi * (x - 1.0)), 0.0)
    d2 = np.where((x > 1.0) & (x < 2.0), 0.6 * np.pi**2 * np.cos(2.0 * np.pi * (x - 1.0)), 0.0)
    return -1.0 / (4.0 * x**2) + d1 / x + d2 + d1**2


def test_midpoint_of_two_critical_potentials_is_strict():
    ex = hardy_exhaustion(12)
    hardy_c = Problem(2.0, hardy(0.25))
    shifted = classify(hardy_c.with_potential(critical_bump_shift), (1.0, 2.0), ex)
    assert shifted.tag == DEGENERATELY_POSITIVE
    setup = PerturbationSetup(hardy_c, smooth_bump(1.0, 1.0, 2.0), (0.9, 2.1), ex, (1.0, 2.0))
    pts = classify_along_segment(setup, hardy(0.25), critical_bump_shift, [0.5])
    assert pts[0].verdict.tag == STRICTLY_POSITIVE


def test_integral_condition_against_the_hardy_ground_state():
    base = classify(Problem(2.0, hardy(0.25)), (1.0, 2.0), hardy_exhaustion(12))
    v = base.witness
    v = v * (1.0 / float(v.at(1.0)))  # v(x) = sqrt(x) up to discretization
    assert integral_condition(v, chi(1.0, 1.0, 2.0), (1.0, 2.0)) == pytest.approx(1.5, rel=0.02)
