"""Energy ``Q(u) = int |u'|^p + V |u|^p``, its weak derivative, Picone terms.

All integrals use the weighted measure of the grid.  Gradients of P1 fields
are element constants, so the ``|u'|^p`` term is integrated exactly; the
potential term uses 3-point Gauss per element.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Union

import numpy as np
from scipy.linalg import solve_banded

from .grid import ElementQuadrature, Field, RadialGrid, element_quadrature, gradient_on_elements

Potential = Union[Callable[[np.ndarray], np.ndarray], Field, float]


def _evaluate_potential(potential: Potential, x: np.ndarray) -> np.ndarray:
    if isinstance(potential, Field):
        return potential.at(x)
    if callable(potential):
        return np.broadcast_to(np.asarray(potential(x), dtype=float), x.shape).copy()
    return np.full(x.shape, float(potential))


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    p: float
    potential: Potential
    domain: RadialGrid

    def __post_init__(self) -> None:
        p = float(self.p)
        if not (1.0 < p < np.inf):
            raise ValueError(f"p must lie in (1, inf), got {self.p}")
        object.__setattr__(self, "p", p)
        if not np.all(np.isfinite(self.V_quad)):
            raise ValueError("potential is not finite at every quadrature point")

    @cached_property
    def V_quad(self) -> np.ndarray:
        return _evaluate_potential(self.potential, self.domain.quadrature.x)

    def V(self, x: np.ndarray) -> np.ndarray:
        return _evaluate_potential(self.potential, np.asarray(x, dtype=float))

    def on(self, grid: RadialGrid) -> "OperatorSpec":
        return OperatorSpec(self.p, self.potential, grid)

    def with_potential(self, potential: Potential) -> "OperatorSpec":
        return OperatorSpec(self.p, potential, self.domain)


@dataclass(frozen=True, eq=False)
class Problem:
    """``(p, V)`` without a mesh; ``on(grid)`` yields the discrete operator."""

    p: float
    potential: Potential

    def __post_init__(self) -> None:
        if not (1.0 < float(self.p) < np.inf):
            raise ValueError(f"p must lie in (1, inf), got {self.p}")
        object.__setattr__(self, "p", float(self.p))

    def on(self, grid: RadialGrid) -> OperatorSpec:
        return OperatorSpec(self.p, self.potential, grid)

    def with_potential(self, potential: Potential) -> "Problem":
        return Problem(self.p, potential)


def add_potentials(*terms: Potential) -> Callable[[np.ndarray], np.ndarray]:
    def V(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return sum(_evaluate_potential(t, x) for t in terms)

    return V


def scaled_potential(c: float, V0: Potential) -> Callable[[np.ndarray], np.ndarray]:
    return lambda x: c * _evaluate_potential(V0, np.asarray(x, dtype=float))


def _check_on(spec: OperatorSpec, u: Field) -> None:
    if not spec.domain.same_as(u.grid):
        raise ValueError("field does not live on the operator's domain")


def _spow(x: np.ndarray, q: float) -> np.ndarray:
    """Signed power |x|^(q-1) x."""
    return np.sign(x) * np.abs(x) ** q


def energy_Q(spec: OperatorSpec, u: Field) -> float:
    _check_on(spec, u)
    g = spec.domain
    q = g.quadrature
    grad = gradient_on_elements(u)
    elem_w = q.w.sum(axis=1)
    uq = u.at_quadrature(q)
    total = np.abs(grad) ** spec.p * elem_w + np.sum(spec.V_quad * np.abs(uq) ** spec.p * q.w, axis=1)
    return float(np.sum(total))


def flux(s: np.ndarray, p: float, eps: float = 0.0) -> np.ndarray:
    """(s^2 + eps^2)^((p-2)/2) s, the (regularized) p-Laplacian flux."""
    if eps == 0.0:
        return _spow(s, p - 1.0)
    return (s * s + eps * eps) ** ((p - 2.0) / 2.0) * s


def dflux(s: np.ndarray, p: float, eps: float = 0.0) -> np.ndarray:
    if p == 2.0:
        return np.ones_like(s)
    e2 = eps * eps
    if e2 == 0.0:
        a = np.abs(s)
        return (p - 1.0) * np.where(a > 0.0, a, 1.0) ** (p - 2.0) * (a > 0.0)
    return (s * s + e2) ** ((p - 4.0) / 2.0) * ((p - 1.0) * s * s + e2)


def _scatter(grid: RadialGrid, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    out = np.zeros(grid.n_nodes)
    out[:-1] += left
    out[1:] += right
    return out


def residual_vector(
    spec: OperatorSpec,
    u: Field | np.ndarray,
    eps: float = 0.0,
) -> np.ndarray:
    """Entries ``<Q'(u), phi_i>`` for every nodal hat ``phi_i``."""
    g = spec.domain
    vals = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    q = g.quadrature
    grad = np.diff(vals) / g.h
    a = flux(grad, spec.p, eps) * q.w.sum(axis=1) / g.h
    uq = vals[:-1, None] * q.phi_left + vals[1:, None] * q.phi_right
    m = spec.V_quad * _spow(uq, spec.p - 1.0) * q.w
    return _scatter(g, -a + np.sum(m * q.phi_left, axis=1), a + np.sum(m * q.phi_right, axis=1))


def residual_scale(spec: OperatorSpec, vals: np.ndarray, eps: float = 0.0) -> float:
    """Largest single element contribution to ``residual_vector``; sets the rounding floor."""
    g = spec.domain
    q = g.quadrature
    grad = np.diff(vals) / g.h
    # rounding in u' is ~ |u| / h, which the flux amplifies by its slope
    du = (np.abs(vals[:-1]) + np.abs(vals[1:])) / g.h
    a = np.maximum(np.abs(flux(grad, spec.p, eps)), dflux(grad, spec.p, eps) * du) * q.w.sum(axis=1) / g.h
    uq = vals[:-1, None] * q.phi_left + vals[1:, None] * q.phi_right
    m = np.sum(np.abs(spec.V_quad * _spow(uq, spec.p - 1.0) * q.w), axis=1)
    return float(np.max(a + m)) if a.size else 0.0


def residual_Qprime(spec: OperatorSpec, u: Field, phi: Field) -> float:
    """``int |u'|^{p-2} u' phi' + V |u|^{p-2} u phi``."""
    _check_on(spec, u)
    _check_on(spec, phi)
    mask = spec.domain.dirichlet_mask
    if np.any(phi.values[mask] != 0.0):
        raise ValueError("test function must vanish on Dirichlet boundary nodes")
    return float(residual_vector(spec, u) @ phi.values)


def tangent_bands(spec: OperatorSpec, vals: np.ndarray, eps: float, mass_shift: np.ndarray | None = None) -> np.ndarray:
    """Tridiagonal Jacobian of ``residual_vector`` in ``solve_banded`` layout.

    ``mass_shift`` (per quadrature point) adds ``int shift * phi_i phi_j``.
    The ``V |u|^{p-2}`` factor is regularized with ``eps`` relative to the
    field scale so that p < 2 stays finite at zeros of u.
    """
    g = spec.domain
    q = g.quadrature
    p = spec.p
    grad = np.diff(vals) / g.h
    k = dflux(grad, p, eps) * q.w.sum(axis=1) / g.h**2
    uq = vals[:-1, None] * q.phi_left + vals[1:, None] * q.phi_right
    if p == 2.0:
        c = spec.V_quad.copy()
    else:
        scale = max(float(np.max(np.abs(vals))), 1e-300)
        e_u = max(eps, 1e-8) * scale
        c = (p - 1.0) * spec.V_quad * (uq * uq + e_u * e_u) ** ((p - 2.0) / 2.0)
    if mass_shift is not None:
        c = c + mass_shift
    cw = c * q.w
    m_ll = np.sum(cw * q.phi_left**2, axis=1)
    m_rr = np.sum(cw * q.phi_right**2, axis=1)
    m_lr = np.sum(cw * q.phi_left * q.phi_right, axis=1)
    n = g.n_nodes
    bands = np.zeros((3, n))
    diag = np.zeros(n)
    diag[:-1] += k + m_ll
    diag[1:] += k + m_rr
    off = -k + m_lr
    bands[1] = diag
    bands[0, 1:] = off  # upper
    bands[2, :-1] = off  # lower
    return bands


def restrict_bands(bands: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Sub-matrix of a tridiagonal band array for a contiguous index range."""
    lo, hi = int(idx[0]), int(idx[-1]) + 1
    sub = bands[:, lo:hi].copy()
    sub[0, 0] = 0.0
    sub[2, -1] = 0.0
    return sub


def gram_bands(grid: RadialGrid) -> np.ndarray:
    """Weighted H^1 Gram matrix (stiffness + mass) as tridiagonal bands."""
    q = grid.quadrature
    k = q.w.sum(axis=1) / grid.h**2
    m_ll = np.sum(q.w * q.phi_left**2, axis=1)
    m_rr = np.sum(q.w * q.phi_right**2, axis=1)
    m_lr = np.sum(q.w * q.phi_left * q.phi_right, axis=1)
    n = grid.n_nodes
    bands = np.zeros((3, n))
    bands[1, :-1] += k + m_ll
    bands[1, 1:] += k + m_rr
    bands[0, 1:] = -k + m_lr
    bands[2, :-1] = -k + m_lr
    return bands


def dual_norm(grid: RadialGrid, r: np.ndarray, nodes: np.ndarray | None = None) -> float:
    """Discrete H^{-1}-type norm ``sqrt(r^T G^{-1} r)`` over a contiguous node set.

    ``nodes`` defaults to all non-Dirichlet nodes; ``G`` is the weighted H^1
    Gram matrix restricted to them.
    """
    idx = grid.free if nodes is None else np.asarray(nodes)
    if idx.size == 0:
        return 0.0
    if np.any(np.diff(idx) != 1):
        raise ValueError("dual norm needs a contiguous node range")
    sub = restrict_bands(gram_bands(grid), idx)
    rr = r[idx]
    y = solve_banded((1, 1), sub, rr)
    return float(np.sqrt(max(rr @ y, 0.0)))


def is_supersolution(spec: OperatorSpec, v: Field, tol: float = 1e-10) -> bool:
    """``<Q'(v), phi_i> >= -tol`` for every non-Dirichlet nodal hat."""
    _check_on(spec, v)
    if not v.is_positive_interior():
        raise ValueError("supersolution test requires a positive field")
    r = residual_vector(spec, v)
    return bool(np.all(r[spec.domain.free] >= -tol))


@dataclass(frozen=True)
class PiconeTerms:
    R: np.ndarray
    L: np.ndarray
    L1: np.ndarray
    L2: np.ndarray
    weights: np.ndarray


def _floor(v: Field, u: Field, v_min: float | None) -> float:
    if v_min is None:
        v_min = 1e-10 * float(np.max(v.values))
    support = np.zeros(u.grid.n_nodes, dtype=bool)
    nz = u.values != 0.0
    support |= nz
    support[:-1] |= nz[1:]
    support[1:] |= nz[:-1]
    if np.any(v.values[support] < v_min):
        raise ValueError("v falls below its floor on the support of u")
    return v_min


def _pointwise(u: Field, v: Field, quad: ElementQuadrature | None = None):
    q = u.grid.quadrature if quad is None else quad
    du = gradient_on_elements(u)[:, None] * np.ones_like(q.x)
    dv = gradient_on_elements(v)[:, None] * np.ones_like(q.x)
    return u.at_quadrature(q), v.at_quadrature(q), du, dv, q


def picone_terms(u: Field, v: Field, p: float, v_min: float | None = None) -> PiconeTerms:
    """Pointwise ``R(u, v)``, ``L``, ``L1``, ``L2`` at the quadrature points."""
    if not u.grid.same_as(v.grid):
        raise ValueError("fields live on different grids")
    if np.any(u.values < 0.0):
        raise ValueError("u must be nonnegative")
    _floor(v, u, v_min)
    uq, vq, du, dv, q = _pointwise(u, v)
    # L vanishes where u' = t v'; its terms cancel there, so evaluate them
    # in extended precision (a no-op where long double is double)
    uq, vq, du, dv = (np.asarray(x, dtype=np.longdouble) for x in (uq, vq, du, dv))
    p = np.longdouble(p)
    vq = np.where(vq > 0.0, vq, np.inf)  # outside supp u the ratio is 0
    t = uq / vq
    adu, adv = np.abs(du), np.abs(dv)
    adv_pm2 = np.where(adv > 0.0, adv, 1.0) ** (p - 2.0) * (adv > 0.0)
    jv = adv_pm2 * dv
    # R = |u'|^p - (u^p / v^{p-1})' |v'|^{p-2} v'
    dquot = p * t ** (p - 1.0) * du - (p - 1.0) * t**p * dv
    R = adu**p - dquot * jv
    L = adu**p + (p - 1.0) * t**p * adv**p - p * t ** (p - 1.0) * du * jv
    L1 = adu**p + (p - 1.0) * t**p * adv**p - p * t ** (p - 1.0) * adu * adv ** (p - 1.0)
    L2 = p * t ** (p - 1.0) * adv_pm2 * (adu * adv - du * dv)
    R, L, L1, L2 = (np.asarray(x, dtype=float) for x in (R, L, L1, L2))
    return PiconeTerms(R=R, L=L, L1=L1, L2=L2, weights=q.w)


def equation_residual(spec: OperatorSpec, v: Field, nodes: np.ndarray | None = None) -> float:
    """Dual norm of ``Q'(v)`` over non-Dirichlet (or the given) nodes."""
    return dual_norm(spec.domain, residual_vector(spec, v), nodes)


def energy_via_picone(
    spec: OperatorSpec,
    u: Field,
    v: Field,
    tol: float = 1e-8,
    v_min: float | None = None,
) -> float:
    """``int L(u, v)``; equals ``Q(u)`` when ``v`` solves ``Q'(v) = 0``.

    The solution check is made on the nodes of ``supp u``, the only place the
    identity uses the equation.
    """
    _check_on(spec, u)
    _check_on(spec, v)
    if np.any(u.values < 0.0):
        raise ValueError("u must be nonnegative")
    idx = _support_nodes(u)
    if idx.size:
        res = equation_residual(spec, v, idx)
        if res > tol:
            raise ValueError(f"v is not a solution on supp u (residual {res:.3e} > {tol:.1e})")
    terms = picone_terms(u, v, spec.p, v_min)
    return float(np.sum(terms.L * terms.weights))


def _support_nodes(u: Field) -> np.ndarray:
    nz = np.flatnonzero(u.values != 0.0)
    if nz.size == 0:
        return nz
    lo = max(int(nz[0]) - 1, 0)
    hi = min(int(nz[-1]) + 1, u.grid.n_nodes - 1)
    idx = np.arange(lo, hi + 1)
    return idx[~u.grid.dirichlet_mask[idx]]


@dataclass(frozen=True)
class EnergySplit:
    Q1: float
    Q2: float


def energy_split(
    u: Field,
    v: Field,
    spec: OperatorSpec,
    crit_rel: float = 1e-12,
    v_min: float | None = None,
) -> EnergySplit:
    """Lower bound ``Q(u) >= Q1 + Q2`` for ``p >= 2``.

    ``Q1`` integrates ``(2/p)|v'|^{p-2} v^2 |((u/v)^{p/2})'|^2`` off the critical
    set of v; ``Q2`` integrates ``|u'|^p`` on elements where ``|v'|`` is below
    ``crit_rel`` times the largest slope of v.
    """
    p = spec.p
    if p < 2.0:
        raise ValueError("the energy split needs p >= 2")
    _check_on(spec, u)
    _check_on(spec, v)
    if np.any(u.values < 0.0):
        raise ValueError("u must be nonnegative")
    _floor(v, u, v_min)
    uq, vq, du, dv, q = _pointwise(u, v)
    slope = np.abs(gradient_on_elements(v))
    scale = float(np.max(slope)) if slope.size else 0.0
    critical = slope <= crit_rel * scale
    vq = np.where(vq > 0.0, vq, np.inf)
    t = uq / vq
    # ((u/v)^{p/2})' = (p/2) t^{p/2-1} (u' v - u v') / v^2
    dq = 0.5 * p * t ** (0.5 * p - 1.0) * (du * vq - uq * dv) / vq**2
    dq = np.where(np.isfinite(vq), dq, 0.0)
    i1 = (2.0 / p) * np.abs(dv) ** (p - 2.0) * np.where(np.isfinite(vq), vq, 0.0) ** 2 * dq**2
    i2 = np.abs(du) ** p
    per_elem_1 = np.sum(i1 * q.w, axis=1)
    per_elem_2 = np.sum(i2 * q.w, axis=1)
    Q1 = float(np.sum(np.where(critical, 0.0, per_elem_1)))
    Q2 = float(np.sum(np.where(critical, per_elem_2, 0.0)))
    return EnergySplit(Q1=Q1, Q2=Q2)
