import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundstate.criticality import (
    DEGENERATELY_POSITIVE,
    INCONCLUSIVE,
    NONPOSITIVE,
    STRICTLY_POSITIVE,
    CbLevel,
    CbRecord,
    Thresholds,
    build_weight,
    classify,
    compute_cB,
    core_weight,
    cutoff_profiles,
    decide,
    hyperbolic_limit,
    make_battery,
    orthogonal_psi,
    partition_of_unity,
    poincare_constant,
    poincare_search,
    positive_solution_via_exhaustion,
    random_bump,
    weighted_mass,
    window_hat,
    _psi_pairing,
)
from groundstate.eigensolve import principal_eigen
from groundstate.errors import PreconditionError
from groundstate.functional import Problem, energy_Q
from groundstate.grid import Exhaustion, Field, GridPolicy, make_grid


def sym_exhaustion(jmax=6, density=32):
    # (-N, N) for N = 2^2 .. 2^jmax
    return Exhaustion.dyadic(lambda N: (-N, N), [2.0**j for j in range(2, jmax + 1)], GridPolicy(density=density), (-0.5, 0.5))


def synthetic(cs, distances=None, lambdas=None):
    g = make_grid(0.0, 1.0, 4)
    f = Field(g, np.array([0, 1, 1, 1, 0.0]))
    n = len(cs)
    distances = distances or [0.001] * n
    lambdas = lambdas or [1.0] * n
    levels = tuple(
        CbLevel(i, (-2.0**i, 2.0**i), math.log(2.0 ** (i + 2)), lambdas[i], cs[i], f, distances[i], True) for i in range(n)
    )
    return CbRecord(2.0, (0.0, 1.0), levels)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.1, 5.0), st.floats(0.0, 3.0))
def test_hyperbolic_limit_is_exact_on_hyperbolas(cinf, a, b):
    L = np.array([2.0, 3.0, 4.5])
    c = cinf + a / (L + b)
    assert hyperbolic_limit(L, c) == pytest.approx(cinf, abs=1e-7 * (1 + a))


def test_thresholds_validation():
    with pytest.raises(ValueError):
        Thresholds(zero_ratio=0.2, strict_ratio=0.1)
    with pytest.raises(ValueError):
        Thresholds(tol_pos=0.0)
    assert Thresholds().as_dict()["tol_neg"] == 1e-10


def test_decide_on_synthetic_sequences():
    assert decide(synthetic([1.0, 0.9, 0.85, 0.84]))[0] == STRICTLY_POSITIVE
    L = np.array([math.log(2.0 ** (i + 2)) for i in range(5)])
    assert decide(synthetic(list(1.0 / L)))[0] == DEGENERATELY_POSITIVE
    # decaying like 1/L but minimizers still moving
    assert decide(synthetic(list(1.0 / L), distances=[0.5] * 5))[0] == INCONCLUSIVE
    assert decide(synthetic([0.5, 0.3, -0.01]))[0] == NONPOSITIVE
    assert decide(synthetic([0.5, 0.3]))[0] == INCONCLUSIVE
    tag, est, ratio, _ = decide(synthetic([1.0, 0.9, 0.85]), Thresholds(stall_tol=1e-6))
    assert tag in (STRICTLY_POSITIVE, INCONCLUSIVE) and math.isfinite(est)


def test_window_must_sit_inside_every_level():
    ex = Exhaustion.dyadic(lambda N: (0.0, N), [1.0, 2.0], GridPolicy(n=32))
    with pytest.raises(PreconditionError):
        compute_cB(Problem(2.0, 0.0), (0.0, 0.5), ex)


def test_line_with_zero_potential_is_degenerate_with_constant_ground_state():
    v = classify(Problem(2.0, 0.0), (-0.5, 0.5), sym_exhaustion(8))
    assert v.tag == DEGENERATELY_POSITIVE
    w = v.witness
    assert np.allclose(w.values, w.values[len(w.values) // 2], rtol=1e-6)
    assert v.record.is_monotone()


def test_positive_constant_potential_is_strict_with_valid_weight():
    problem = Problem(2.0, 1.0)
    ex = sym_exhaustion(6)
    v = classify(problem, (-0.5, 0.5), ex)
    assert v.tag == STRICTLY_POSITIVE
    W = v.weight
    spec = problem.on(W.grid)
    rng = np.random.default_rng(0)
    for _ in range(20):
        u = random_bump(W.grid, rng)
        assert energy_Q(spec, u) >= weighted_mass(W, u, 2.0) - 1e-12
    assert np.all(W.values >= 0.0) and np.max(W.values) > 0.0


def test_bounded_domain_mode_uses_the_principal_eigenvalue():
    lv = [(2.0**-j, 1 - 2.0**-j) for j in range(2, 6)] + [(0.0, 1.0)]
    ex = Exhaustion(tuple(lv), GridPolicy(density=128), (0.4, 0.6), tuple(2.0**j for j in range(2, 7)), bounded=True)
    assert classify(Problem(2.0, 0.0), (0.4, 0.6), ex).tag == STRICTLY_POSITIVE
    lam = principal_eigen(Problem(2.0, 0.0).on(ex.grid(len(ex) - 1))).lambda_
    v = classify(Problem(2.0, -lam), (0.4, 0.6), ex)
    assert v.tag == DEGENERATELY_POSITIVE
    assert v.witness.is_positive_interior()


def test_negative_witness_has_negative_energy():
    problem = Problem(2.0, -1.0)
    v = classify(problem, (-0.5, 0.5), sym_exhaustion(5))
    assert v.tag == NONPOSITIVE
    assert energy_Q(problem.on(v.witness.grid), v.witness) < 0.0


def hardy_levels(c, jmax, make_level=True):
    ex = Exhaustion.dyadic(lambda N: (1.0 / N, N), [2.0**j for j in range(2, jmax + 1)], GridPolicy(kind="geometric", density=32), (1.0, 2.0))
    if not make_level:
        ex = Exhaustion(ex.levels, ex.policy, ex.window, ex.scales)
    return Problem(2.0, lambda x: -c / x**2), ex


def test_negative_extrapolation_finds_a_witness_past_the_last_level():
    # every level up to N = 64 still has c_B > 0; the sign change is near N = 144
    problem, ex = hardy_levels(0.35, 6)
    v = classify(problem, (1.0, 2.0), ex)
    assert np.all(v.record.c > 0.0)
    assert v.tag == NONPOSITIVE and v.c_limit < 0.0
    g = v.witness.grid
    assert g.b > 64.0
    assert energy_Q(problem.on(g), v.witness) < 0.0


def test_negative_extrapolation_without_a_level_rule_is_inconclusive():
    problem, ex = hardy_levels(0.35, 6, make_level=False)
    v = classify(problem, (1.0, 2.0), ex)
    assert v.tag == INCONCLUSIVE and v.trending_negative


def test_power_law_decay_of_cB_is_not_read_as_negative():
    # on the line with V = 0, c_B ~ 1/N overshoots the log-hyperbola below zero
    v = classify(Problem(2.0, 0.0), (-0.5, 0.5), sym_exhaustion(8))
    assert v.ratio < -Thresholds().zero_ratio
    assert v.tag == DEGENERATELY_POSITIVE


def test_partition_of_unity():
    g = make_grid(0.0, 10.0, 200)
    cover = [(1.0, 4.0), (3.0, 7.0), (6.0, 9.0)]
    chis, core = partition_of_unity(g, cover)
    total = sum(c.values for c in chis)
    r = g.nodes
    inside = (r >= core[0]) & (r <= core[1])
    assert np.allclose(total[inside], 1.0)
    for (a, b), c in zip(cover, chis):
        assert np.all(c.values[(r <= a) | (r >= b)] == 0.0)
    with pytest.raises(PreconditionError):
        partition_of_unity(g, [(1.0, 2.0), (5.0, 6.0)], core=(1.5, 5.5))


def test_build_weight_refuses_nonpositive_cover_and_wrong_tag():
    ex = sym_exhaustion(4)
    with pytest.raises(PreconditionError):
        build_weight(Problem(2.0, -1.0), [(-0.5, 0.5)], ex)
    with pytest.raises(PreconditionError):
        build_weight(Problem(2.0, 1.0), [(-0.5, 0.5)], ex, tag=DEGENERATELY_POSITIVE)


def test_weight_report_constants_are_clamped():
    rep = build_weight(Problem(2.0, 1.0), [(-0.5, 0.5), (0.2, 1.0)], sym_exhaustion(5), report=True)
    assert all(0.0 <= c <= 1.0 for c in rep.constants)
    assert len(rep.cover) == 2


def test_cutoff_profiles_and_battery():
    g = make_grid(-8.0, 8.0, 256)
    v = Field(g, np.r_[0.0, np.ones(255), 0.0])
    prof = cutoff_profiles(v, (-0.5, 0.5))
    assert len(prof) == 8
    for f in prof:
        assert f.values[0] == 0 and f.values[-1] == 0
        assert np.all(f.values[np.abs(g.nodes) <= 0.5] == 1.0)
    battery = make_battery(v, (-0.5, 0.5), np.random.default_rng(0), n_random=5)
    assert len(battery) == 13


def test_poincare_refuses_orthogonal_psi_and_finds_c_otherwise():
    problem = Problem(2.0, 0.0)
    v = classify(problem, (-0.5, 0.5), sym_exhaustion(8)).witness
    g = v.grid
    W = core_weight(g, (g.a, g.b))
    battery = make_battery(v, (-0.5, 0.5), np.random.default_rng(0), 16)
    psi = window_hat(g, (-0.5, 0.5))
    res = poincare_constant(problem.on(g), v, psi, W, battery)
    assert res.C is not None and res.C <= 1e6
    assert min(res.margins) >= 0.0
    psi0 = orthogonal_psi(v, (-0.5, 0.5))
    assert abs(_psi_pairing(psi0, v)) < 1e-10
    with pytest.raises(PreconditionError):
        poincare_constant(problem.on(g), v, psi0, W, battery)
    res0 = poincare_search(problem.on(g), psi0, W, battery, C_max=4.0)
    assert res0.C is None or res0.C >= res.C


def test_positive_solution_via_exhaustion_on_the_line():
    ex = Exhaustion.dyadic(lambda N: (-N, N), [2.0**j for j in range(2, 12)], GridPolicy(density=16))
    vs = positive_solution_via_exhaustion(Problem(2.0, 0.0), ex, 0.0, return_levels=True)
    assert len(vs) == len(ex) - 1
    m = np.abs(vs[-1].grid.nodes) <= 1.0
    devs = [float(np.max(np.abs(v.values[np.abs(v.grid.nodes) <= 1.0] - 1.0))) for v in vs]
    assert devs[-1] < 0.02 and devs[-1] < devs[0]
    assert np.all(vs[-1].values[1:-1] > 0)
