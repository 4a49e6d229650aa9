"""Radial p-Green functions with pole at the origin, for ``1 < p <= d``.

``G_{N,k}`` solves ``Q'(G) = f_k`` on the annulus ``(1/k, R_N)`` with zero
flux at ``1/k`` and ``G = 0`` at ``R_N``; ``f_k >= 0`` lives on
``(1/k, 2/k)`` with unit mass in the radial measure.  Zero flux makes the
whole unit mass pass through every sphere outside the bump, which fixes the
pole normalization without a separate rescaling.

As ``R_N`` grows ``G_N(x1)`` increases.  It converges (the Green function
exists) or grows without bound (the equation has a global minimal positive
solution, and the functional is critical).  The two are told apart by the
increments of ``G_N(x1)`` per level: geometric decay versus no decay.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .criticality import DEGENERATELY_POSITIVE, STRICTLY_POSITIVE, Thresholds, Verdict, classify
from .eigensolve import SolveOptions, solve_dirichlet, weighted_eigen
from .errors import PreconditionError, SolverError
from .functional import OperatorSpec, Problem, dual_norm, residual_vector
from .grid import DIRICHLET, NATURAL, POLE, Exhaustion, Field, GridPolicy, RadialGrid, sphere_area

GREEN_EXISTS = "GreenExists"
GLOBAL_MINIMAL = "GlobalMinimal"
UNDECIDED = "Undecided"


def alpha(d: int, p: float) -> float:
    """Pole exponent ``(p - d) / (p - 1)``."""
    return (p - d) / (p - 1.0)


def pole_constant(d: int, p: float) -> float:
    """Leading coefficient of the pole: ``G ~ K r^alpha`` (p < d) or ``G ~ -K log r`` (p = d)."""
    s = sphere_area(d) ** (-1.0 / (p - 1.0))
    return s if p == d else (p - 1.0) / (d - p) * s


def bump(grid: RadialGrid, k: float) -> Field:
    """Quadratic hat on ``(1/k, 2/k)`` with unit mass in the grid's measure."""
    r = grid.nodes
    lo, hi = 1.0 / k, 2.0 / k
    t = np.clip((r - lo) / (hi - lo), 0.0, 1.0)
    f = Field(grid, 4.0 * t * (1.0 - t))
    return f * (1.0 / _mass(f))


def _mass(f: Field) -> float:
    q = f.grid.quadrature
    return float(np.sum(f.at_quadrature(q) * q.w))


def annulus_grid(k: float, R: float, d: int, per_octave: float) -> RadialGrid:
    """Nodes ``q^i / k`` with ``q = 2^(1/per_octave)``, closed by a node at ``R``.

    A fixed ratio keeps the meshes for different ``R`` nested, so the
    sequence ``G_N`` sees one discrete operator.
    """
    a = 1.0 / k
    if not R > 2.0 * a:
        raise PreconditionError("ball must contain the bump")
    q = 2.0 ** (1.0 / per_octave)
    m = int(math.floor(math.log(R / a) / math.log(q) + 1e-9))
    nodes = a * q ** np.arange(m + 1)
    if R - nodes[-1] < 0.5 * (nodes[-1] - nodes[-2]):
        nodes = nodes[:-1]
    return RadialGrid(np.append(nodes, R), d, NATURAL, DIRICHLET)


def green_level(
    problem: Problem,
    d: int,
    k: float,
    R: float,
    per_octave: float = 32.0,
    opts: SolveOptions = SolveOptions(),
) -> Field:
    """One ``G_{N,k}``; refuses when the annulus operator is not coercive."""
    g = annulus_grid(k, R, d, per_octave)
    spec = problem.on(g)
    lam = weighted_eigen(spec, opts).lambda_
    if lam <= 0.0:
        raise PreconditionError(f"operator is not positive on (1/{k:g}, {R:g}): lambda = {lam:.3g}")
    return solve_dirichlet(spec, bump(g, k), opts, lambda1=lam)


@dataclass(frozen=True)
class SingularityFit:
    exponent: float
    constant: float
    removable: bool
    log_branch: bool


def fit_singularity(
    v: Field,
    pole_window: tuple[float, float],
    log_branch: bool = False,
    eps_exp: float = 0.05,
) -> SingularityFit:
    """Least squares of ``log v`` on ``log r`` (or of ``v`` on ``-log r``) over the window.

    Power branch: ``exponent`` is the slope, ``constant = exp(intercept)``.
    Log branch: ``exponent`` is 0 and ``constant`` the coefficient of ``-log r``.
    ``removable`` flags a fitted exponent ``>= -eps_exp`` (power branch) or a
    log coefficient below ``eps_exp`` times the window mean (log branch).
    """
    a, b = pole_window
    r = v.grid.nodes
    m = (r >= a) & (r <= b) & (r > 0.0)
    if np.count_nonzero(m) <= 3:
        raise PreconditionError("pole window holds 3 nodes or fewer")
    x, y = r[m], v.values[m]
    if np.any(y <= 0.0) and not log_branch:
        raise PreconditionError("field must be positive on the pole window")
    if log_branch:
        A = np.vstack([-np.log(x), np.ones_like(x)]).T
        c, _ = np.linalg.lstsq(A, y, rcond=None)[0]
        return SingularityFit(0.0, float(c), bool(c < eps_exp * np.mean(np.abs(y))), True)
    A = np.vstack([np.log(x), np.ones_like(x)]).T
    slope, icpt = np.linalg.lstsq(A, np.log(y), rcond=None)[0]
    return SingularityFit(float(slope), float(math.exp(icpt)), bool(slope >= -eps_exp), False)


@dataclass(frozen=True)
class GreenLevel:
    N: int
    R: float
    k: float
    value_x1: float
    field: Field


@dataclass(frozen=True)
class GreenResult:
    levels: tuple[GreenLevel, ...]
    fields: tuple[Field, ...]  # last-k solution per R_N
    limit: Field | None
    fitted_exponent: float
    fitted_constant: float
    classification: str
    increments: tuple[float, ...]
    ratios: tuple[float, ...]
    k_spread: float  # relative change of G(x1) between the last two k
    normalized_distance: float  # last two G_N / G_N(x1) on the compact window
    d: int = 3
    p: float = 2.0

    def rows(self) -> list[dict]:
        return [
            {"N": lv.N, "R": lv.R, "k": lv.k, "G_x1": lv.value_x1, "exponent": self.fitted_exponent}
            for lv in self.levels
        ]

    def to_record(self) -> dict:
        return {
            "classification": self.classification,
            "fitted_exponent": self.fitted_exponent,
            "fitted_constant": self.fitted_constant,
            "alpha": alpha(self.d, self.p),
            "pole_constant": pole_constant(self.d, self.p),
            "increments": list(self.increments),
            "ratios": list(self.ratios),
            "k_spread": self.k_spread,
            "normalized_distance": self.normalized_distance,
        }


@dataclass(frozen=True)
class GreenThresholds:
    """``G_N(x1)`` increments with ratio below ``ratio_max`` count as decaying."""

    ratio_max: float = 0.95


def _normalized_distance(u: Field, w: Field, x1: float, window: tuple[float, float]) -> float:
    a, b = window
    r = u.grid.nodes
    m = (r >= a) & (r <= b)
    un = u.values[m] / float(u.at(x1))
    wn = w.at(r[m]) / float(w.at(x1))
    return float(np.max(np.abs(un - wn)))


def green_function(
    problem: Problem,
    d: int,
    radii: Sequence[float],
    k_sequence: Sequence[float],
    x1: float,
    per_octave: float = 32.0,
    opts: SolveOptions = SolveOptions(),
    thresholds: GreenThresholds = GreenThresholds(),
    pole_window: tuple[float, float] | None = None,
    compact: tuple[float, float] | None = None,
) -> GreenResult:
    """``G_{N,k}`` over ``R_N in radii`` and ``k in k_sequence`` with the growth dichotomy.

    For each ``R_N`` the k-sequence is run to its end; the last-k field is
    the level's approximation of ``G_N``.  The last two ``k`` show how far the
    values at ``x1`` still move (``k_spread``).
    """
    p = problem.p
    if d < 2:
        raise PreconditionError("radial Green functions need d >= 2")
    if not 1.0 < p <= d:
        raise PreconditionError(f"need 1 < p <= d, got p = {p}, d = {d}")
    radii = [float(R) for R in radii]
    ks = sorted(float(k) for k in k_sequence)
    if any(b <= a for a, b in zip(radii, radii[1:])):
        raise PreconditionError("radii must increase")
    if not (2.0 / ks[0] < x1 < radii[0]):
        raise PreconditionError("x1 must lie outside every bump and inside every ball")
    levels, fields = [], []
    spread = math.nan
    for N, R in enumerate(radii):
        prev = None
        vals = []
        for k in ks:
            try:
                G = green_level(problem, d, k, R, per_octave, opts)
            except SolverError as exc:
                raise SolverError(f"Green solve failed (R = {R:g}, k = {k:g}): {exc}", level=N) from exc
            prev = G
            vals.append(float(G.at(x1)))
            levels.append(GreenLevel(N, R, k, vals[-1], G))
        if len(vals) > 1:
            spread = abs(vals[-1] - vals[-2]) / abs(vals[-1])
        fields.append(prev)
    gx = np.array([float(F.at(x1)) for F in fields])
    inc = np.diff(gx)
    ratios = inc[1:] / np.where(inc[:-1] != 0.0, inc[:-1], np.nan) if inc.size > 1 else np.array([])
    compact = compact or (0.5 * x1, min(2.0 * x1, radii[0]))
    ndist = _normalized_distance(fields[-1], fields[-2], x1, compact) if len(fields) > 1 else math.nan
    cls = UNDECIDED
    limit = None
    if ratios.size >= 2:
        last = ratios[-2:]
        if np.all(last < thresholds.ratio_max):
            cls = GREEN_EXISTS
            rho = max(float(last[-1]), 0.0)  # negative ratios are roundoff-level increments
            # geometric tail of the increments
            tail = inc[-1] * rho / (1.0 - rho)
            limit = fields[-1] + Field(fields[-1].grid, np.full(fields[-1].grid.n_nodes, tail))
            limit = Field(limit.grid, np.where(fields[-1].grid.nodes < radii[-1], limit.values, 0.0))
        elif np.all(last >= thresholds.ratio_max) and np.all(inc > 0.0):
            cls = GLOBAL_MINIMAL
            limit = fields[-1] * (1.0 / float(fields[-1].at(x1)))
    kmax = ks[-1]
    if pole_window is None:
        pole_window = (10.0 / kmax, min(100.0 / kmax, 0.5 * x1))
    fit = fit_singularity(fields[-1], pole_window, log_branch=(p == d))
    return GreenResult(
        levels=tuple(levels),
        fields=tuple(fields),
        limit=limit,
        fitted_exponent=fit.exponent,
        fitted_constant=fit.constant,
        classification=cls,
        increments=tuple(float(x) for x in inc),
        ratios=tuple(float(x) for x in ratios),
        k_spread=spread,
        normalized_distance=ndist,
        d=d,
        p=p,
    )


def minimal_growth_compare(
    spec: OperatorSpec,
    u: Field,
    v: Field,
    K1: tuple[float, float],
    tol: float = 1e-8,
    residual_tol: float = 1e-6,
    touch: bool = True,
) -> bool:
    """Minimal-growth implication on the exterior of ``K1`` (nodes with r > K1[1]).

    With ``touch`` (default) u is first scaled so that ``u <= v`` on the
    boundary of K1 with equality at one end; the result is whether the scaled
    u stays below ``v`` (up to ``tol`` relative to max v) on every exterior node.
    Without ``touch`` the implication is evaluated literally.
    """
    g = spec.domain
    if not (u.grid.same_as(g) and v.grid.same_as(g)):
        raise PreconditionError("fields must live on the operator's domain")
    r = g.nodes
    ext = np.flatnonzero((r > K1[1]) & ~g.dirichlet_mask)
    if ext.size == 0:
        raise PreconditionError("no exterior nodes")
    res = dual_norm(g, residual_vector(spec, u), ext)
    if res > residual_tol * max(float(np.max(np.abs(u.values))), 1e-300):
        raise PreconditionError(f"u is not a solution outside K1 (residual {res:.3e})")
    rv = residual_vector(spec, v)
    if np.any(rv[ext] < -residual_tol * max(float(np.max(np.abs(v.values))), 1e-300)):
        raise PreconditionError("v is not a supersolution outside K1")
    bnd = [x for x in K1 if g.a < x < g.b]
    ub, vb = np.array([float(u.at(x)) for x in bnd]), np.array([float(v.at(x)) for x in bnd])
    if touch:
        if np.any(ub <= 0.0):
            raise PreconditionError("u must be positive on the boundary of K1")
        u = u * float(np.min(vb / ub))
    elif np.any(ub > vb):
        return True  # premise fails
    allr = np.flatnonzero(r > K1[1])
    return bool(np.all(u.values[allr] <= v.values[allr] + tol * float(np.max(np.abs(v.values)))))


@dataclass(frozen=True)
class EquivalenceReport:
    verdict: str
    green: str
    expected_pair: bool
    status: str  # agree | disagree | untested
    details: dict = field(default_factory=dict)


def criticality_via_green(
    problem: Problem,
    d: int,
    radii: Sequence[float],
    k_sequence: Sequence[float],
    x1: float,
    window: tuple[float, float] = (1.0, 2.0),
    per_octave: float = 32.0,
    inner: float = 1e-3,
    thresholds: Thresholds = Thresholds(),
    green_thresholds: GreenThresholds = GreenThresholds(),
    opts: SolveOptions = SolveOptions(),
    classify_radii: Sequence[float] | None = None,
) -> EquivalenceReport:
    """Classify on balls ``B(0, R_N)`` and build ``G_N``; check the two verdicts match.

    StrictlyPositive pairs with GreenExists, DegeneratelyPositive with
    GlobalMinimal.  An Inconclusive or Undecided side leaves the equivalence
    untested.  ``classify_radii`` (default ``radii``) lets the ball
    exhaustion stop earlier than the Green levels: the principal eigenvalue
    of a huge ball drops below what double precision resolves.
    """
    if not 1.0 < problem.p <= d:
        raise PreconditionError(f"need 1 < p <= d, got p = {problem.p}, d = {d}")
    policy = GridPolicy(kind="pole-geometric", dim=d, left_bc=POLE, right_bc=DIRICHLET, density=per_octave, inner=inner)
    cr = tuple(float(R) for R in (radii if classify_radii is None else classify_radii))
    ex = Exhaustion(tuple((0.0, R) for R in cr), policy, window, cr, make_level=lambda R: (0.0, R))
    verdict: Verdict = classify(problem, window, ex, thresholds, opts)
    gr = green_function(problem, d, radii, k_sequence, x1, per_octave, opts, green_thresholds)
    pairs = {STRICTLY_POSITIVE: GREEN_EXISTS, DEGENERATELY_POSITIVE: GLOBAL_MINIMAL}
    details = {"verdict": verdict.to_record(), "green": gr.to_record()}
    if verdict.tag not in pairs or gr.classification == UNDECIDED:
        return EquivalenceReport(verdict.tag, gr.classification, False, "untested", details)
    ok = pairs[verdict.tag] == gr.classification
    return EquivalenceReport(verdict.tag, gr.classification, ok, "agree" if ok else "disagree", details)


def green_table(result: GreenResult) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["N", "R", "k", "G_x1", "fitted_exponent"])
    for row in result.rows():
        w.writerow([row["N"], f"{row['R']:.10g}", f"{row['k']:.10g}", f"{row['G_x1']:.12g}", f"{row['exponent']:.10g}"])
    return buf.getvalue()
