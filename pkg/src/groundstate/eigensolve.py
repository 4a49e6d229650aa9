"""Principal eigenpairs, nonlinear Dirichlet solves and comparison checks."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .errors import PreconditionError, SolverError
from .functional import (
    OperatorSpec,
    dual_norm,
    energy_Q,
    residual_scale,
    residual_vector,
    restrict_bands,
    tangent_bands,
)
from .grid import DIRICHLET, Field, RadialGrid, element_quadrature, lp_norm_p

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolveOptions:
    max_iter: int = 400
    rtol: float = 1e-10
    residual_tol: float = 1e-8
    # Newton / continuation
    newton_max_iter: int = 60
    newton_tol: float = 1e-12
    eps0: float | None = None  # None: 0.1 * max |u'| of the starting guess
    eps_final: float = 1e-10
    eps_factor: float = 0.5
    armijo: float = 1e-4
    backtrack: float = 0.5
    max_backtracks: int = 40
    # eigen iteration
    shift_fraction: float = 0.25
    inner_tol: float = 1e-4  # relative residual accepted for inverse-iteration images
    seed: str = "auto"  # auto | distance | log-distance

    def __post_init__(self) -> None:
        if not self.rtol > 0.0:
            raise ValueError("rtol must be positive")
        if not 0.0 < self.eps_factor < 1.0:
            raise ValueError("eps schedule must be strictly decreasing")
        if self.eps_final < 0.0:
            raise ValueError("eps_final must be >= 0")

    def eps_schedule(self, scale: float) -> list[float]:
        e = self.eps0 if self.eps0 is not None else 0.1 * max(scale, 1e-12)
        out = []
        while e > self.eps_final:
            out.append(e)
            e *= self.eps_factor
        out.append(self.eps_final)
        return out


@dataclass(frozen=True)
class EigenResult:
    lambda_: float
    eigenfunction: Field
    iterations: int
    residual: float
    converged: bool
    history: tuple[float, ...] = field(default=(), repr=False)

    def to_record(self) -> dict:
        return {
            "lambda": self.lambda_,
            "residual": self.residual,
            "iterations": self.iterations,
            "converged": self.converged,
            "grid": self.eigenfunction.grid.descriptor(),
        }


class PowerMass:
    """``N(u) = int_window |u|^p`` with its gradient vector and Jacobian."""

    def __init__(self, grid: RadialGrid, p: float, window: tuple[float, float] | None = None):
        self.grid = grid
        self.p = p
        self.window = window
        self.quad = grid.quadrature if window is None else element_quadrature(grid, window)

    def _uq(self, vals: np.ndarray) -> np.ndarray:
        q = self.quad
        return vals[:-1, None] * q.phi_left + vals[1:, None] * q.phi_right

    def norm(self, vals: np.ndarray) -> float:
        return float(np.sum(np.abs(self._uq(vals)) ** self.p * self.quad.w))

    def vector(self, vals: np.ndarray) -> np.ndarray:
        q = self.quad
        uq = self._uq(vals)
        m = np.abs(uq) ** (self.p - 2.0) * uq * q.w if self.p != 2.0 else uq * q.w
        out = np.zeros(self.grid.n_nodes)
        out[:-1] += np.sum(m * q.phi_left, axis=1)
        out[1:] += np.sum(m * q.phi_right, axis=1)
        return out

    def bands(self, vals: np.ndarray, eps_rel: float) -> np.ndarray:
        q = self.quad
        uq = self._uq(vals)
        if self.p == 2.0:
            c = q.w
        else:
            e = max(eps_rel, 1e-8) * max(float(np.max(np.abs(vals))), 1e-300)
            c = (self.p - 1.0) * (uq * uq + e * e) ** ((self.p - 2.0) / 2.0) * q.w
        ll = np.sum(c * q.phi_left**2, axis=1)
        rr = np.sum(c * q.phi_right**2, axis=1)
        lr = np.sum(c * q.phi_left * q.phi_right, axis=1)
        n = self.grid.n_nodes
        b = np.zeros((3, n))
        b[1, :-1] += ll
        b[1, 1:] += rr
        b[0, 1:] = lr
        b[2, :-1] = lr
        return b


def _load_vector(grid: RadialGrid, f: Field) -> np.ndarray:
    q = grid.quadrature
    fq = f.at_quadrature(q) * q.w
    out = np.zeros(grid.n_nodes)
    out[:-1] += np.sum(fq * q.phi_left, axis=1)
    out[1:] += np.sum(fq * q.phi_right, axis=1)
    return out


def _newton(
    spec: OperatorSpec,
    rhs: np.ndarray,
    u0: np.ndarray,
    opts: SolveOptions,
    mass: PowerMass | None = None,
    sigma: float = 0.0,
) -> tuple[np.ndarray, bool, dict]:
    """Solve ``Q'(u) + sigma N'(u)/p = rhs`` on free nodes, Dirichlet values from ``u0``.

    Damped Newton on the eps-regularized operator with continuation
    ``eps -> eps_final`` (skipped for p = 2, where the problem is linear in
    the flux).  Globalized by Armijo backtracking on the residual norm.
    """
    g = spec.domain
    idx = g.free
    u = np.array(u0, dtype=float)

    def F(vals: np.ndarray, eps: float) -> np.ndarray:
        r = residual_vector(spec, vals, eps) - rhs
        if mass is not None and sigma != 0.0:
            r = r + sigma * mass.vector(vals)
        return r[idx]

    def J(vals: np.ndarray, eps: float) -> np.ndarray:
        b = tangent_bands(spec, vals, eps)
        if mass is not None and sigma != 0.0:
            b = b + sigma * mass.bands(vals, eps)
        return restrict_bands(b, idx)

    # boundary data alone can drive the problem, so scale by the initial residual too
    ref = max(float(np.max(np.abs(rhs[idx]))) if idx.size else 0.0, 1e-300)
    if idx.size:
        ub = np.where(g.dirichlet_mask, u, 0.0)
        ref = max(ref, float(np.max(np.abs(residual_vector(spec, ub)[idx]))))
    if spec.p == 2.0:
        schedule = [0.0]
    else:
        grad_scale = float(np.max(np.abs(np.diff(u) / g.h))) if np.any(u) else 0.0
        if grad_scale == 0.0:
            # crude magnitude guess from the data: |u'|^{p-1} ~ rhs / h
            grad_scale = (ref / float(np.min(g.h))) ** (1.0 / (spec.p - 1.0))
        schedule = opts.eps_schedule(grad_scale)
    info = {"newton_iterations": 0, "stages": len(schedule), "ref": ref}
    for stage, eps in enumerate(schedule):
        final = stage == len(schedule) - 1
        tol = opts.newton_tol * ref if final else 1e-6 * ref
        max_it = opts.newton_max_iter if final else 8
        r = F(u, eps)
        nr = float(np.linalg.norm(r, np.inf))
        for _ in range(max_it):
            if nr <= tol:
                break
            info["newton_iterations"] += 1
            try:
                d = solve_banded((1, 1), J(u, eps), -r)
            except (np.linalg.LinAlgError, ValueError):
                return u, False, info
            if not np.all(np.isfinite(d)):
                return u, False, info
            t = 1.0
            n2 = float(np.linalg.norm(r))
            for _bt in range(opts.max_backtracks):
                trial = u.copy()
                trial[idx] += t * d
                rt = F(trial, eps)
                if np.all(np.isfinite(rt)) and np.linalg.norm(rt) <= (1.0 - opts.armijo * t) * n2:
                    break
                t *= opts.backtrack
            else:
                if final:
                    # accept tiny steps only if they help at all
                    if not (np.all(np.isfinite(rt)) and np.linalg.norm(rt) < n2):
                        break
                else:
                    break
            u, r = trial, rt
            nr = float(np.linalg.norm(r, np.inf))
        if final:
            r0 = F(u, 0.0)
            if spec.p > 2.0 and eps > 0.0:
                # the eps = 0 Jacobian stays finite for p > 2; polish away the regularization bias
                for _ in range(5):
                    n0 = float(np.linalg.norm(r0))
                    if float(np.linalg.norm(r0, np.inf)) <= tol:
                        break
                    try:
                        d = solve_banded((1, 1), J(u, 0.0), -r0)
                    except (np.linalg.LinAlgError, ValueError):
                        break
                    trial = u.copy()
                    trial[idx] += d
                    rt = F(trial, 0.0) if np.all(np.isfinite(d)) else None
                    if rt is None or not np.all(np.isfinite(rt)) or np.linalg.norm(rt) >= n0:
                        break
                    u, r0 = trial, rt
                    info["newton_iterations"] += 1
            info["residual_inf"] = float(np.linalg.norm(r0, np.inf))
            floor = 1e-12 * residual_scale(spec, u)  # cancellation limit of the assembly
            ok = bool(np.all(np.isfinite(u))) and info["residual_inf"] <= max(tol, 1e3 * opts.newton_tol * ref, floor)
            return u, ok, info
    return u, False, info  # pragma: no cover


def rayleigh_quotient(spec: OperatorSpec, u: Field) -> float:
    g = spec.domain
    if np.any(u.values[g.dirichlet_mask] != 0.0):
        raise PreconditionError("u must vanish on Dirichlet boundary nodes")
    den = lp_norm_p(u, spec.p)
    if not den > 0.0:
        raise PreconditionError("zero denominator in the Rayleigh quotient")
    return energy_Q(spec, u) / den


def seed_profile(grid: RadialGrid, kind: str = "auto") -> np.ndarray:
    """Positive profile vanishing at Dirichlet endpoints."""
    r = grid.nodes
    a, b = grid.a, grid.b
    if kind == "auto":
        kind = "log-distance" if (a > 0.0 and b / a > 50.0) else "distance"
    if kind == "log-distance":
        s = np.log(r)
        la, lb = s[0], s[-1]
    elif kind == "distance":
        s, la, lb = r, a, b
    else:
        raise ValueError(f"unknown seed profile {kind!r}")
    left = (s - la) if grid.left_bc == DIRICHLET else np.full_like(s, lb - la)
    right = (lb - s) if grid.right_bc == DIRICHLET else np.full_like(s, lb - la)
    prof = left * right
    prof[grid.dirichlet_mask] = 0.0
    return prof


def _shift_factors(n: int = 12):
    yield 1.0
    for k in range(1, n):
        yield 4.0**-k
        yield 4.0**k


def weighted_eigen(
    spec: OperatorSpec,
    opts: SolveOptions = SolveOptions(),
    window: tuple[float, float] | None = None,
    start: np.ndarray | None = None,
) -> EigenResult:
    """Minimize ``Q(u) / int_window |u|^p`` over the grid's P1 space.

    Projected descent: each step moves toward the shifted inverse-iteration
    image of the iterate (a preconditioned gradient direction), then takes
    the nodal absolute value and renormalizes.  Steps are accepted only if
    the quotient does not increase.
    """
    g = spec.domain
    p = spec.p
    mass = PowerMass(g, p, window)
    u = seed_profile(g, opts.seed) if start is None else np.abs(np.array(start, dtype=float))
    u[g.dirichlet_mask] = 0.0
    nu = mass.norm(u)
    if not nu > 0.0:
        raise PreconditionError("starting profile has no mass on the normalization window")
    u /= nu ** (1.0 / p)
    lam = energy_Q(spec, Field(g, u))
    if not math.isfinite(lam):
        raise SolverError("energy is not finite; potential too singular for the grid", iteration=0)
    history = [lam]
    scale = abs(lam) + 1.0
    s = opts.shift_fraction * scale
    converged = False
    res = math.inf
    it = 0
    for it in range(1, opts.max_iter + 1):
        # shifted inverse iteration image; grow the shift until it is positive
        # too small a shift is not coercive; too large a one breaks the discrete
        # maximum principle on coarse elements (consistent mass), so try both ways
        w = None
        inner = ~g.dirichlet_mask
        for factor in _shift_factors():
            trial_s = s * factor
            rhs = trial_s * mass.vector(u)
            cand, ok, info = _newton(spec, rhs, u, opts, mass, trial_s - lam)
            # only a descent direction is needed: an inexact solve will do
            usable = ok or info.get("residual_inf", math.inf) <= opts.inner_tol * info["ref"]
            if usable and np.all(np.isfinite(cand)) and np.all(cand[inner] > 0.0):
                w, s = cand, trial_s
                break
        if w is None:
            raise SolverError("could not find a coercive shift", iteration=it)
        w /= mass.norm(w) ** (1.0 / p)
        d = w - u
        t = 1.0
        accepted = False
        for _bt in range(opts.max_backtracks):
            cand = np.abs(u + t * d)
            cand /= mass.norm(cand) ** (1.0 / p)
            lam_c = energy_Q(spec, Field(g, cand))
            if lam_c <= lam + 1e-14 * (1.0 + abs(lam)):
                accepted = True
                break
            t *= opts.backtrack
        if not accepted:
            break
        change = abs(lam - lam_c) / (1.0 + abs(lam_c))
        u, lam = cand, lam_c
        history.append(lam)
        r = residual_vector(spec, u) - lam * mass.vector(u)
        res = dual_norm(g, r)
        if change < opts.rtol and res < opts.residual_tol:
            converged = True
            break
        # tighten the shift toward the spectrum as the iterate settles
        floor = 1e-3 * abs(lam) + 1e-12 * scale
        s = max(min(s, 4.0 * (history[-2] - lam) + floor), floor)
    if not converged:
        r = residual_vector(spec, u) - lam * mass.vector(u)
        res = dual_norm(g, r)
        converged = res < opts.residual_tol and len(history) > 1 and abs(history[-1] - history[-2]) <= opts.rtol * (1 + abs(lam))
    phi = Field(g, u)
    return EigenResult(
        lambda_=lam,
        eigenfunction=phi,
        iterations=it,
        residual=res,
        converged=converged,
        history=tuple(history),
    )


def principal_eigen(spec: OperatorSpec, opts: SolveOptions = SolveOptions(), start: np.ndarray | None = None) -> EigenResult:
    """Principal Dirichlet eigenpair, eigenfunction positive with unit p-norm."""
    g = spec.domain
    if g.right_bc != DIRICHLET or g.left_bc not in (DIRICHLET, "pole"):
        raise PreconditionError("principal_eigen needs Dirichlet (or pole + Dirichlet) boundaries")
    res = weighted_eigen(spec, opts, None, start)
    lam = rayleigh_quotient(spec, res.eigenfunction)
    return EigenResult(lam, res.eigenfunction, res.iterations, res.residual, res.converged, res.history)


def solve_dirichlet(
    spec: OperatorSpec,
    f: Field,
    opts: SolveOptions = SolveOptions(),
    boundary_values: tuple[float, float] = (0.0, 0.0),
    lambda1: float | None = None,
    guess: Field | None = None,
) -> Field:
    """Solve ``Q'(u) = f`` with Dirichlet data, for ``f >= 0``.

    ``lambda1`` is the caller's principal eigenvalue of the domain; a
    nonpositive value is refused since the maximum principle then fails.
    """
    g = spec.domain
    if not f.grid.same_as(g):
        raise PreconditionError("f must live on the operator's domain")
    if np.any(f.values < 0.0):
        raise PreconditionError("f must be nonnegative")
    if lambda1 is not None and lambda1 <= 0.0:
        raise PreconditionError(f"principal eigenvalue {lambda1:.4g} <= 0: maximum principle fails")
    rhs = _load_vector(g, f)
    u0 = np.zeros(g.n_nodes) if guess is None else np.array(guess.values, dtype=float)
    if g.left_bc == DIRICHLET:
        u0[0] = boundary_values[0]
    if g.right_bc == DIRICHLET:
        u0[-1] = boundary_values[1]
    if not np.any(rhs) and not np.any(u0[g.dirichlet_mask]):
        return Field.zeros(g)
    if guess is None and spec.p != 2.0:
        # the p = 2 solution is a positive, well-scaled starting point
        u0 = _newton(OperatorSpec(2.0, spec.potential, g), rhs, u0, opts)[0]
        u0 = np.maximum(u0, 0.0)
    u, ok, info = _newton(spec, rhs, u0, opts)
    if not ok:
        raise SolverError("Dirichlet solve did not converge", iteration=info.get("newton_iterations"), **info)
    if np.any(u < -1e-12 * max(1.0, float(np.max(np.abs(u))))):
        raise SolverError("Dirichlet solution is not nonnegative (maximum principle violated)")
    return Field(g, u)


def check_comparison(spec: OperatorSpec, u1: Field, u2: Field, tol: float = 1e-10) -> bool:
    if not (u1.grid.same_as(spec.domain) and u2.grid.same_as(spec.domain)):
        raise PreconditionError("fields must live on the operator's domain")
    return bool(np.all(u1.values <= u2.values + tol))
