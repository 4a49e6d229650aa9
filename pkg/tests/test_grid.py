import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundstate.grid import (
    DIRICHLET,
    NATURAL,
    POLE,
    Exhaustion,
    Field,
    GridPolicy,
    RadialGrid,
    integrate,
    is_nested,
    lp_norm_p,
    make_geometric_grid,
    make_grid,
    read_field,
    sphere_area,
    write_field,
)


def test_sphere_area():
    assert sphere_area(1) == 1.0
    assert sphere_area(2) == pytest.approx(2 * math.pi)
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(4) == pytest.approx(2 * math.pi**2)


def test_grid_validation():
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        RadialGrid(np.array([0.0, 0.5, 0.5, 1.0]))
    with pytest.raises(ValueError):
        RadialGrid(np.linspace(0, 1, 5), 3, DIRICHLET)  # r = 0 needs a pole marker
    with pytest.raises(ValueError):
        RadialGrid(np.linspace(0, 1, 5), 1, POLE)
    with pytest.raises(ValueError):
        RadialGrid(np.linspace(0, 1, 5), 1, "robin")
    g = make_grid(0.0, 1.0, 4, d=3)
    assert g.left_bc == POLE and list(g.free) == [0, 1, 2, 3]


def test_make_grid_grading_clusters_left():
    g = make_grid(0.0, 1.0, 10, grading=2.0)
    assert g.h[0] < g.h[-1]
    assert g.nodes[0] == 0.0 and g.nodes[-1] == 1.0


def test_geometric_grid_is_log_uniform():
    g = make_geometric_grid(1e-3, 1e3, 60)
    ratios = g.nodes[1:] / g.nodes[:-1]
    assert np.allclose(ratios, ratios[0])


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_quadrature_exact_for_polynomials(d):
    # the weighted measure of the ball / interval, and a cubic moment
    g = make_grid(0.0, 2.0, 7, d=d, grading=1.3)
    q = g.quadrature
    vol = integrate(g, np.ones_like(q.x))
    assert vol == pytest.approx(sphere_area(d) * 2.0**d / d, rel=1e-12)
    m = integrate(g, q.x**2)
    assert m == pytest.approx(sphere_area(d) * 2.0 ** (d + 2) / (d + 2), rel=1e-12)


def test_windowed_integral_does_not_need_aligned_nodes():
    g = make_grid(0.0, 1.0, 3)
    f = Field(g, np.ones(g.n_nodes))
    assert lp_norm_p(f, 2.0, (0.1, 0.55)) == pytest.approx(0.45)
    with pytest.raises(ValueError):
        lp_norm_p(f, 2.0, (-0.5, 0.5))


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6))
def test_l2_norm_of_p1_field_is_exact(vals):
    g = RadialGrid(np.linspace(0.0, 1.0, 6))
    f = Field(g, np.array(vals))
    got = lp_norm_p(f, 2.0)
    # exact L2 of a P1 function: sum h/3 (a^2 + ab + b^2)
    a, b = np.array(vals[:-1]), np.array(vals[1:])
    assert got == pytest.approx(float(np.sum(0.2 / 3 * (a * a + a * b + b * b))), rel=1e-12, abs=1e-14)


def test_field_algebra_and_interpolation():
    g = make_grid(0.0, 1.0, 4)
    u = Field.from_function(g, lambda r: r)
    v = Field.zeros(g)
    assert np.allclose((u + v).values, u.values)
    assert np.allclose((2 * u).values, 2 * u.values)
    assert u.at(0.3) == pytest.approx(0.3)
    w = Field(make_grid(0.0, 1.0, 5), np.zeros(6))
    with pytest.raises(ValueError):
        u + w
    with pytest.raises(ValueError):
        Field(g, np.zeros(3))
    assert not Field(g, np.array([0, 1, 0, 1, 0.0])).is_positive_interior()
    assert Field(g, np.array([0, 1, 2, 1, 0.0])).is_positive_interior()


def test_restrict():
    g = make_grid(0.0, 1.0, 10)
    u = Field.from_function(g, lambda r: r**2)
    s = u.restrict((0.2, 0.6))
    assert s.grid.a == pytest.approx(0.2) and s.grid.b == pytest.approx(0.6)
    assert s.grid.left_bc == NATURAL


def test_policy_element_counts_and_pole_geometric():
    pol = GridPolicy(kind="geometric", density=16)
    assert pol.elements(1.0, 16.0) == 64
    pol = GridPolicy(kind="uniform", density=8)
    assert pol.build(0.0, 2.0).n_elements == 16
    pg = GridPolicy(kind="pole-geometric", dim=3, left_bc=POLE, density=8, inner=1e-2).build(0.0, 10.0)
    assert pg.nodes[0] == 0.0 and pg.nodes[1] == pytest.approx(1e-2)
    with pytest.raises(ValueError):
        GridPolicy(kind="pole-geometric", dim=3, left_bc=POLE).build(1.0, 10.0)
    with pytest.raises(ValueError):
        GridPolicy(kind="spiral")


def test_exhaustion_validation():
    pol = GridPolicy(n=16)
    with pytest.raises(ValueError):
        Exhaustion(((0.0, 2.0), (0.5, 1.0)), pol)
    with pytest.raises(ValueError):
        Exhaustion(((0.0, 1.0), (0.0, 2.0)), pol, window=(0.5, 1.5))
    with pytest.raises(ValueError):
        Exhaustion(((0.0, 1.0), (0.0, 2.0)), pol, scales=(2.0, 1.0))
    ex = Exhaustion.dyadic(lambda s: (-s, s), [1.0, 2.0, 4.0], pol, (-0.5, 0.5))
    assert len(ex) == 3
    assert ex.log_size(2) == pytest.approx(math.log(4.0))
    assert len(ex.truncate(2)) == 2
    assert is_nested(ex.levels)


def test_exhaustion_extension_continues_the_scale_ratio():
    pol = GridPolicy(n=16)
    ex = Exhaustion.dyadic(lambda s: (1.0 / s, s), [2.0, 4.0, 8.0], pol, (0.6, 1.5))
    big = ex.extended(2)
    assert big.scales == (2.0, 4.0, 8.0, 16.0, 32.0)
    assert big.levels[-1] == (1.0 / 32.0, 32.0)
    assert len(big.truncate(4).extended(1)) == 5
    with pytest.raises(ValueError):
        Exhaustion(ex.levels, pol, scales=ex.scales).extended(1)
    with pytest.raises(ValueError):
        Exhaustion(ex.levels, pol, scales=ex.scales, bounded=True, make_level=lambda s: (0.0, s)).extended(1)


def test_field_roundtrip(tmp_path):
    g = make_geometric_grid(0.1, 10.0, 12, 3, NATURAL, DIRICHLET)
    u = Field.from_function(g, lambda r: 1.0 / r)
    write_field(tmp_path / "u.dat", u, p=2.5, note="x")
    v, meta = read_field(tmp_path / "u.dat")
    assert v.grid.same_as(g)
    assert np.array_equal(v.values, u.values)
    assert meta["note"] == "x"
