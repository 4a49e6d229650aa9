"""Ground-state alternative along an exhaustion.

For a window ``B`` and nested bounded levels ``Omega_N`` the quantity

    c_B(N) = min { Q(u) : u in the level-N P1 space, int_B |u|^p = 1 }

is non-increasing in N.  Its limit is positive for strictly positive
functionals and zero for critical ones, where the B-normalized minimizers
converge to the ground state.  A negative principal eigenvalue on some
level exhibits a function with negative energy.

The decay of c_B for critical problems is slow (typically ``1/log N``), so
the limit is estimated by extrapolating the last three levels with
``c = c_inf + a / (L + b)`` on the axis ``L = log N``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .eigensolve import SolveOptions, principal_eigen, solve_dirichlet, weighted_eigen
from .errors import PreconditionError, SolverError
from .functional import OperatorSpec, Problem, energy_Q, equation_residual
from .grid import DIRICHLET, POLE, Exhaustion, Field, RadialGrid, integrate, lp_norm_p

log = logging.getLogger(__name__)

NONPOSITIVE = "Nonpositive"
STRICTLY_POSITIVE = "StrictlyPositive"
DEGENERATELY_POSITIVE = "DegeneratelyPositive"
INCONCLUSIVE = "Inconclusive"


@dataclass(frozen=True)
class Thresholds:
    """Decision thresholds of ``classify``.

    ``strict_ratio`` / ``zero_ratio`` bound the extrapolated limit relative to
    the last computed c_B.  ``stall_tol`` is the relative spread of the last
    three c_B values below which the sequence counts as stabilized.
    """

    tol_neg: float = 1e-10
    tol_pos: float = 1e-6
    strict_ratio: float = 0.1
    zero_ratio: float = 0.05
    stall_tol: float = 1e-3
    cauchy_tol: float = 1e-2
    residual_tol: float = 1e-8
    # extra levels tried for a negative-energy witness when c_B extrapolates below zero
    witness_levels: int = 4

    def __post_init__(self) -> None:
        if not self.zero_ratio < self.strict_ratio:
            raise ValueError("zero_ratio must be below strict_ratio")
        for name in ("tol_neg", "tol_pos", "stall_tol", "cauchy_tol", "residual_tol"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.witness_levels < 0:
            raise ValueError("witness_levels must be >= 0")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class CbLevel:
    index: int
    domain: tuple[float, float]
    log_size: float
    lambda_: float
    c: float  # nan when the level is not positive (lambda_ < 0)
    minimizer: Field | None  # B-normalized, on the full level grid
    distance: float  # L^p(B) distance to the previous level's minimizer
    converged: bool

    def row(self) -> dict:
        return {
            "N": self.index,
            "a": self.domain[0],
            "b": self.domain[1],
            "c_B": self.c,
            "lambda": self.lambda_,
            "distance": self.distance,
            "converged": self.converged,
        }


@dataclass(frozen=True)
class CbRecord:
    p: float
    window: tuple[float, float]
    levels: tuple[CbLevel, ...]
    negative_witness: Field | None = None  # principal eigenfunction with lambda < 0
    bounded: bool = False  # last level is the whole domain

    @property
    def c(self) -> np.ndarray:
        return np.array([lv.c for lv in self.levels])

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([lv.lambda_ for lv in self.levels])

    @property
    def positive_levels(self) -> tuple[CbLevel, ...]:
        return tuple(lv for lv in self.levels if lv.minimizer is not None)

    def is_monotone(self, rel: float = 1e-9) -> bool:
        """c_B and lambda non-increasing across levels (rounding slack ``rel``)."""
        c = np.array([lv.c for lv in self.positive_levels])
        lam = self.lambdas
        ok_c = np.all(np.diff(c) <= rel * (1.0 + np.abs(c[:-1]))) if c.size > 1 else True
        ok_l = np.all(np.diff(lam) <= rel * (1.0 + np.abs(lam[:-1]))) if lam.size > 1 else True
        return bool(ok_c and ok_l)

    def rows(self) -> list[dict]:
        return [lv.row() for lv in self.levels]


def _distance(u: Field, prev: Field | None, p: float, window) -> float:
    if prev is None:
        return math.nan
    moved = Field(u.grid, prev.at(u.grid.nodes))
    return lp_norm_p(u - moved, p, window) ** (1.0 / p)


def compute_cB(
    problem: Problem,
    window: tuple[float, float],
    exhaustion: Exhaustion,
    opts: SolveOptions = SolveOptions(),
    stop_on_negative: bool = True,
) -> CbRecord:
    """c_B(N) and lambda_1(Omega_N) level by level, warm-starting each level.

    Levels whose principal eigenvalue is negative have ``c_B = -inf`` (mass
    can be pushed off B at negative cost); the eigenfunction is kept as the
    negative-energy witness and, by default, later levels are skipped.
    """
    wa, wb = window
    levels: list[CbLevel] = []
    prev_u: Field | None = None
    prev_phi: Field | None = None
    witness = None
    for i in range(len(exhaustion)):
        a, b = exhaustion.levels[i]
        if not (a < wa < wb < b):
            raise PreconditionError(f"window {window} is not compactly inside level {i} ({a}, {b})")
        g = exhaustion.grid(i)
        spec = problem.on(g)
        start = None if prev_phi is None else prev_phi.at(g.nodes)
        try:
            eig = principal_eigen(spec, opts, start)
        except SolverError as exc:
            raise SolverError(f"principal eigenvalue failed: {exc}", level=i, iteration=exc.iteration) from exc
        prev_phi = eig.eigenfunction
        if eig.lambda_ < 0.0:
            witness = eig.eigenfunction
            levels.append(CbLevel(i, (a, b), exhaustion.log_size(i), eig.lambda_, math.nan, None, math.nan, eig.converged))
            log.info("level %d: lambda %.6g < 0", i, eig.lambda_)
            if stop_on_negative:
                break
            continue
        start = None if prev_u is None else prev_u.at(g.nodes)
        try:
            res = weighted_eigen(spec, opts, window, start)
        except SolverError as exc:
            raise SolverError(f"c_B minimization failed: {exc}", level=i, iteration=exc.iteration) from exc
        u = res.eigenfunction
        dist = _distance(u, prev_u, problem.p, window)
        levels.append(CbLevel(i, (a, b), exhaustion.log_size(i), eig.lambda_, res.lambda_, u, dist, res.converged and eig.converged))
        log.info("level %d (%g, %g): c_B %.6g lambda %.6g", i, a, b, res.lambda_, eig.lambda_)
        prev_u = u
    complete = exhaustion.bounded and len(levels) == len(exhaustion)
    return CbRecord(problem.p, (float(wa), float(wb)), tuple(levels), witness, complete)


def hyperbolic_limit(L: Sequence[float], c: Sequence[float]) -> float:
    """Limit of ``c = c_inf + a / (L + b)`` through three points.

    Falls back to a least-squares line in ``1/L`` when no hyperbola with
    ``L + b > 0`` fits (the fit is then no longer shift invariant).
    """
    (L1, L2, L3), (c1, c2, c3) = [float(x) for x in L], [float(x) for x in c]
    d12, d23 = c1 - c2, c2 - c3
    if abs(d23) <= 1e-15 * max(abs(c3), 1e-300) or abs(d12) <= 1e-15 * max(abs(c3), 1e-300):
        return c3
    R = d12 / d23
    k = (L3 - L2) * R
    den = k - (L2 - L1)
    if R > 0.0 and abs(den) > 1e-14 * abs(k):
        b = ((L2 - L1) * L3 - k * L1) / den
        if min(L1, L2, L3) + b > 0.0:
            a = d12 / (1.0 / (L1 + b) - 1.0 / (L2 + b))
            est = c3 - a / (L3 + b)
            if math.isfinite(est):
                return est
    s = 1.0 / np.asarray([L1, L2, L3]) if min(L1, L2, L3) > 0.0 else np.asarray([L1, L2, L3])
    A = np.vstack([np.ones(3), s]).T
    return float(np.linalg.lstsq(A, np.array([c1, c2, c3]), rcond=None)[0][0])


@dataclass(frozen=True)
class Verdict:
    tag: str
    record: CbRecord
    witness: Field | None = None  # negative-energy field or ground state
    weight: Field | None = None
    c_limit: float = math.nan
    ratio: float = math.nan
    thresholds: Thresholds = field(default_factory=Thresholds)
    reason: str = ""

    @property
    def trending_negative(self) -> bool:
        """Extrapolated limit below zero while c_B still decreases."""
        return self.tag == INCONCLUSIVE and self.c_limit < 0.0

    def to_record(self) -> dict:
        return {
            "verdict": self.tag,
            "reason": self.reason,
            "c_limit": self.c_limit,
            "ratio": self.ratio,
            "levels": len(self.record.levels),
            "thresholds": self.thresholds.as_dict(),
        }


def _decreasing(c: np.ndarray) -> bool:
    return bool(np.all(np.diff(c) <= 1e-12 * (1.0 + np.abs(c[:-1]))) and c[-1] < c[0])


def decide(record: CbRecord, th: Thresholds = Thresholds()) -> tuple[str, float, float, str]:
    """Verdict tag, extrapolated limit, limit/last ratio and the reason."""
    if record.negative_witness is not None:
        return NONPOSITIVE, -math.inf, -math.inf, "negative principal eigenvalue on a level"
    pos = record.positive_levels
    for lv in pos:
        if lv.c < -th.tol_neg:
            return NONPOSITIVE, lv.c, -math.inf, f"negative c_B at level {lv.index}"
    if record.bounded:
        # on a bounded domain strict positivity is lambda_1 > 0
        lam, c_last = pos[-1].lambda_, pos[-1].c
        if lam > th.tol_pos:
            return STRICTLY_POSITIVE, c_last, 1.0, "positive principal eigenvalue of the bounded domain"
        return DEGENERATELY_POSITIVE, c_last, math.nan, "principal eigenvalue of the bounded domain vanishes"
    if len(pos) < 3:
        return INCONCLUSIVE, math.nan, math.nan, "fewer than three positive levels"
    last = pos[-3:]
    c = np.array([lv.c for lv in last])
    L = np.array([lv.log_size for lv in last])
    est = hyperbolic_limit(L, c)
    ratio = est / c[-1] if c[-1] > 0.0 else math.nan
    spread = (c[0] - c[-1]) / max(abs(c[-1]), 1e-300)
    if c[-1] > th.tol_pos and spread < th.stall_tol:
        return STRICTLY_POSITIVE, float(c[-1]), 1.0, "c_B stalled"
    if est > th.tol_pos and ratio >= th.strict_ratio:
        return STRICTLY_POSITIVE, est, ratio, "extrapolated c_B bounded away from zero"
    if ratio <= th.zero_ratio or c[-1] < th.tol_pos:
        dist = last[-1].distance
        if not _decreasing(c):
            return INCONCLUSIVE, est, ratio, "c_B small but not decreasing"
        if not (dist < th.cauchy_tol):
            return INCONCLUSIVE, est, ratio, f"minimizers not Cauchy on B (distance {dist:.3g})"
        return DEGENERATELY_POSITIVE, est, ratio, "c_B extrapolates to zero; minimizers settle"
    return INCONCLUSIVE, est, ratio, "trend between thresholds"


def classify(
    problem: Problem,
    window: tuple[float, float],
    exhaustion: Exhaustion,
    thresholds: Thresholds = Thresholds(),
    opts: SolveOptions = SolveOptions(),
    cover: Sequence[tuple[float, float]] | None = None,
    record: CbRecord | None = None,
) -> Verdict:
    """Nonpositive / StrictlyPositive / DegeneratelyPositive / Inconclusive.

    The strictly positive witness is the weight from ``build_weight`` over
    ``cover`` (default: the window itself); the degenerate witness is the
    extracted ground state.
    """
    if record is None:
        record = compute_cB(problem, window, exhaustion, opts)
    tag, est, ratio, reason = decide(record, thresholds)
    witness = weight = None
    if tag in (DEGENERATELY_POSITIVE, INCONCLUSIVE) and _heading_negative(record, ratio, thresholds):
        found = _extended_witness(problem, record, exhaustion, thresholds, opts)
        if found is None:
            return Verdict(INCONCLUSIVE, record, None, None, est, ratio, thresholds, "c_B extrapolates below zero; no negative level found")
        witness, scale = found
        return Verdict(NONPOSITIVE, record, witness, None, est, ratio, thresholds, f"c_B extrapolates below zero; negative level at scale {scale:g}")
    if tag == NONPOSITIVE:
        witness = _negative_witness(problem, record, exhaustion, thresholds)
    elif tag == STRICTLY_POSITIVE:
        records = {tuple(window): record}
        weight = build_weight(problem, cover or [window], exhaustion, opts, records=records, thresholds=thresholds)
    elif tag == DEGENERATELY_POSITIVE:
        witness = extract_ground_state(problem, record, exhaustion, opts, thresholds.residual_tol, tag=tag)
    return Verdict(tag, record, witness, weight, est, ratio, thresholds, reason)


def _negative_witness(problem: Problem, record: CbRecord, exhaustion: Exhaustion, th: Thresholds) -> Field:
    if record.negative_witness is not None:
        w = record.negative_witness
    else:
        w = next(lv.minimizer for lv in record.positive_levels if lv.c < -th.tol_neg)
    spec = problem.on(w.grid)
    if not energy_Q(spec, w) < 0.0:  # re-check, never trust the tag alone
        raise SolverError("negative-energy witness failed its re-check")
    return w


def _heading_negative(record: CbRecord, ratio: float, th: Thresholds) -> bool:
    """Both the hyperbolic and the geometric-tail extrapolation fall clearly below zero.

    The hyperbola in log-size alone misreads c_B decaying like a power of the
    scale; the geometric tail of the last two decrements guards against that.
    """
    pos = record.positive_levels
    if record.bounded or len(pos) < 3 or not ratio < -th.zero_ratio:
        return False
    c = np.array([lv.c for lv in pos[-3:]])
    if not _decreasing(c):
        return False
    d12, d23 = c[0] - c[1], c[1] - c[2]
    r = d23 / d12
    tail = c[2] - d23 * r / (1.0 - r) if r < 1.0 else -math.inf
    return tail < -th.zero_ratio * c[2]


def _extended_witness(
    problem: Problem, record: CbRecord, exhaustion: Exhaustion, th: Thresholds, opts: SolveOptions
) -> tuple[Field, float] | None:
    """Principal eigenfunction with negative energy on a level past the last one, if any."""
    try:
        ext = exhaustion.extended(th.witness_levels)
    except ValueError:
        return None
    prev = record.positive_levels[-1].minimizer
    for i in range(len(exhaustion), len(ext)):
        g = ext.grid(i)
        spec = problem.on(g)
        try:
            eig = principal_eigen(spec, opts, None if prev is None else prev.at(g.nodes))
        except SolverError:
            return None
        prev = eig.eigenfunction
        log.info("witness search: scale %g lambda %.6g", ext.scales[i], eig.lambda_)
        if eig.lambda_ < 0.0 and energy_Q(spec, eig.eigenfunction) < 0.0:
            return eig.eigenfunction, ext.scales[i]
    return None


def _core_level(record: CbRecord, exhaustion: Exhaustion) -> int:
    """Level whose log-size is closest to half of the last one (and above the first)."""
    pos = record.positive_levels
    target = 0.5 * (pos[0].log_size + pos[-1].log_size)
    idx = min(range(len(pos) - 1), key=lambda k: abs(pos[k].log_size - target))
    return pos[idx].index


def extract_ground_state(
    problem: Problem,
    record: CbRecord,
    exhaustion: Exhaustion,
    opts: SolveOptions = SolveOptions(),
    residual_tol: float = 1e-8,
    tag: str | None = None,
    core_level: int | None = None,
) -> Field:
    """Ground state on a core level, normalized to unit p-mass on B.

    The last-level minimizer solves ``Q'(u) = c_B |u|^{p-2} u 1_B`` and so is
    not itself a solution.  Its values on the boundary of a core level are
    used as Dirichlet data for ``Q'(v) = 0`` there; with the core at about
    half the log-size of the last level the data is close to the ground
    state while the equation is met to solver precision.
    """
    if tag is not None and tag != DEGENERATELY_POSITIVE:
        raise PreconditionError(f"ground state requested for a {tag} record")
    pos = record.positive_levels
    if len(pos) < 2:
        raise PreconditionError("need at least two positive levels")
    if record.negative_witness is not None:
        raise PreconditionError("record has a negative level")
    if record.bounded:
        u = pos[-1].minimizer
        return u * (1.0 / lp_norm_p(u, problem.p, record.window) ** (1.0 / problem.p))
    k = _core_level(record, exhaustion) if core_level is None else core_level
    lv = next(x for x in pos if x.index == k)
    u_last = pos[-1].minimizer
    g = exhaustion.grid(k)
    if g.left_bc not in (DIRICHLET, POLE) or g.right_bc != DIRICHLET:
        raise PreconditionError("core level must carry Dirichlet (or pole) boundaries")
    spec = problem.on(g)
    data = (float(u_last.at(g.a)), float(u_last.at(g.b)))
    guess = Field(g, u_last.at(g.nodes))
    v = solve_dirichlet(spec, Field.zeros(g), opts, data, lambda1=lv.lambda_, guess=guess)
    v = v * (1.0 / lp_norm_p(v, problem.p, record.window) ** (1.0 / problem.p))
    res = equation_residual(spec, v)
    if res > residual_tol:
        raise SolverError(f"ground state residual {res:.3e} above {residual_tol:.1e}", level=k)
    if not v.is_positive_interior():
        raise SolverError("ground state is not positive", level=k)
    return v


def _hat(r: np.ndarray, a: float, b: float) -> np.ndarray:
    m = 0.5 * (a + b)
    return np.clip(np.minimum(r - a, b - r) / (m - a), 0.0, 1.0)


def partition_of_unity(
    grid: RadialGrid,
    cover: Sequence[tuple[float, float]],
    core: tuple[float, float] | None = None,
) -> tuple[list[Field], tuple[float, float]]:
    """Nodal hats over the cover windows, divided by their sum on the core.

    A node keeps a nonzero value for window j only when both neighbouring
    elements lie inside that window, so the P1 interpolant never leaks
    outside it.  Without an explicit core, the core is the node range where
    the hats are positive, which must then be gap-free.
    """
    r = grid.nodes
    left = np.concatenate([[r[0]], r[:-1]])
    right = np.concatenate([r[1:], [r[-1]]])
    hats = []
    for a, b in cover:
        h = _hat(r, a, b)
        h[(left < a) | (right > b)] = 0.0
        hats.append(h)
    total = np.sum(hats, axis=0)
    if core is None:
        nz = np.flatnonzero(total > 0.0)
        if nz.size == 0:
            raise PreconditionError("cover windows are not resolved by the grid")
        core = (float(r[nz[0]]), float(r[nz[-1]]))
    ca, cb = core
    in_core = (r >= ca) & (r <= cb)
    if np.any(total[in_core] <= 0.0):
        bad = r[in_core][total[in_core] <= 0.0]
        raise PreconditionError(f"cover does not cover the core near r = {bad[0]:.6g}")
    safe = np.where(total > 0.0, total, 1.0)
    return [Field(grid, np.where(total > 0.0, h / safe, 0.0)) for h in hats], (float(ca), float(cb))


@dataclass(frozen=True)
class WeightReport:
    W: Field
    constants: tuple[float, ...]  # C_j = min(c_{B_j}, 1)
    cover: tuple[tuple[float, float], ...]
    core: tuple[float, float]


def build_weight(
    problem: Problem,
    cover: Sequence[tuple[float, float]],
    exhaustion: Exhaustion,
    opts: SolveOptions = SolveOptions(),
    core: tuple[float, float] | None = None,
    records: dict | None = None,
    thresholds: Thresholds = Thresholds(),
    tag: str | None = None,
    report: bool = False,
) -> Field | WeightReport:
    """``W = sum_j 2^{-j} min(c_{B_j}, 1) chi_j`` on the last level grid.

    ``c_{B_j}`` is the extrapolated limit clamped to the last computed value,
    so ``Q(u) >= int W |u|^p`` holds on the last level's space and, when
    the extrapolation is right, on the whole domain.
    """
    if tag is not None and tag != STRICTLY_POSITIVE:
        raise PreconditionError(f"weight requested for a {tag} functional")
    cover = [tuple(map(float, w)) for w in cover]
    if not cover:
        raise PreconditionError("empty cover")
    records = dict(records or {})
    g = exhaustion.grid(len(exhaustion) - 1)
    chis, core = partition_of_unity(g, cover, core)
    constants = []
    W = np.zeros(g.n_nodes)
    for j, (win, chi) in enumerate(zip(cover, chis), start=1):
        rec = records.get(win)
        if rec is None:
            rec = compute_cB(problem, win, exhaustion, opts)
        tag_j, est, _, _ = decide(rec, thresholds)
        if tag_j == NONPOSITIVE:
            raise PreconditionError(f"functional is not positive (window {win})")
        c_last = rec.positive_levels[-1].c
        c = min(c_last, est) if math.isfinite(est) else c_last
        cj = min(max(c, 0.0), 1.0)
        constants.append(cj)
        W += 2.0**-j * cj * chi.values
    Wf = Field(g, W)
    if report:
        return WeightReport(Wf, tuple(constants), tuple(cover), core)
    return Wf


def weighted_mass(W: Field, u: Field, p: float) -> float:
    """``int W |u|^p`` with W interpolated to the quadrature points of u's grid."""
    q = u.grid.quadrature
    return integrate(u.grid, W.at(q.x) * np.abs(u.at_quadrature(q)) ** p)


def core_weight(grid: RadialGrid, core: tuple[float, float]) -> Field:
    """A P1 hat-plateau weight, 1 on the middle of ``core`` and 0 outside it."""
    (a, b), r = core, grid.nodes
    ramp = 0.25 * (b - a)
    w = np.clip(np.minimum(r - a, b - r) / ramp, 0.0, 1.0)
    return Field(grid, w)


# -- test batteries ---------------------------------------------------------

def random_bump(grid: RadialGrid, rng: np.random.Generator, support: tuple[float, float] | None = None) -> Field:
    """Nonnegative smooth profile supported in a random subinterval."""
    r = grid.nodes
    lo, hi = support if support is not None else (grid.a, grid.b)
    log_scale = lo > 0.0 and hi / lo > 20.0
    s = np.log(r) if log_scale else r
    slo, shi = (math.log(lo), math.log(hi)) if log_scale else (lo, hi)
    x0, x1 = np.sort(rng.uniform(slo, shi, size=2))
    if x1 - x0 < 0.05 * (shi - slo):
        x1 = min(shi, x0 + 0.05 * (shi - slo))
    t = np.clip((s - x0) / max(x1 - x0, 1e-300), 0.0, 1.0)
    prof = np.sin(np.pi * t) ** 2 * (1.0 + 0.5 * rng.uniform(-1, 1) * np.sin(2 * np.pi * t))
    prof[grid.dirichlet_mask] = 0.0
    return Field(grid, np.maximum(prof, 0.0))


def log_cutoff(grid: RadialGrid, inner: tuple[float, float], outer: tuple[float, float]) -> np.ndarray:
    """1 on ``inner``, 0 outside ``outer``, linear in log r in between (r > 0)."""
    r = grid.nodes
    (ia, ib), (oa, ob) = inner, outer
    lr = np.log(r)
    up = np.clip((lr - math.log(oa)) / (math.log(ia) - math.log(oa)), 0.0, 1.0)
    down = np.clip((math.log(ob) - lr) / (math.log(ob) - math.log(ib)), 0.0, 1.0)
    return np.minimum(up, down)


def linear_cutoff(grid: RadialGrid, inner: tuple[float, float], outer: tuple[float, float]) -> np.ndarray:
    r = grid.nodes
    (ia, ib), (oa, ob) = inner, outer
    up = np.clip((r - oa) / (ia - oa), 0.0, 1.0)
    down = np.clip((ob - r) / (ob - ib), 0.0, 1.0)
    return np.minimum(up, down)


def cutoff_profiles(v: Field, window: tuple[float, float], count: int = 8) -> list[Field]:
    """``v * cutoff`` with cutoffs equal to 1 on growing neighbourhoods of the window."""
    g = v.grid
    interior = g.nodes[1:-1]
    lo, hi = float(interior[0]), float(interior[-1])
    wa, wb = window
    out = []
    for k in range(count):
        f = (k + 1) / count
        if lo > 0.0:
            ia, ib = wa * (lo / wa) ** (0.5 * f), wb * (hi / wb) ** (0.5 * f)
            oa, ob = wa * (lo / wa) ** f, wb * (hi / wb) ** f
            cut = log_cutoff(g, (ia, ib), (oa, ob))
        else:
            ia, ib = wa + 0.5 * f * (lo - wa), wb + 0.5 * f * (hi - wb)
            oa, ob = wa + f * (lo - wa), wb + f * (hi - wb)
            cut = linear_cutoff(g, (ia, ib), (oa, ob))
        vals = v.values * cut
        vals[g.dirichlet_mask] = 0.0
        out.append(Field(g, vals))
    return out


def make_battery(v: Field, window: tuple[float, float], rng: np.random.Generator, n_random: int = 64) -> list[Field]:
    """Random compactly supported bumps plus ``v * cutoff`` near-ground-state profiles."""
    return cutoff_profiles(v, window) + [random_bump(v.grid, rng) for _ in range(n_random)]


# -- Poincare-type inequality -----------------------------------------------

@dataclass(frozen=True)
class PoincareResult:
    C: float | None  # None: no C up to the search limit works
    worst_index: int
    worst: Field | None
    margins: tuple[float, ...]  # per battery element at the returned C


def _psi_pairing(psi: Field, u: Field) -> float:
    q = u.grid.quadrature
    return integrate(u.grid, psi.at(q.x) * u.at_quadrature(q))


def poincare_check(spec: OperatorSpec, psi: Field, W: Field, battery: Sequence[Field], C: float) -> np.ndarray:
    """Margins ``Q(u) + C |int psi u|^p - C^{-1} int W |u|^p`` per battery element."""
    p = spec.p
    out = []
    for u in battery:
        out.append(energy_Q(spec, u) + C * abs(_psi_pairing(psi, u)) ** p - weighted_mass(W, u, p) / C)
    return np.array(out)


def poincare_search(
    spec: OperatorSpec,
    psi: Field,
    W: Field,
    battery: Sequence[Field],
    C_max: float = 1e12,
    tol: float = 0.0,
) -> PoincareResult:
    """Smallest power of two C <= C_max with all margins >= -tol."""
    C = 1.0
    margins = poincare_check(spec, psi, W, battery, C)
    while np.min(margins) < -tol:
        if C * 2.0 > C_max:
            i = int(np.argmin(margins))
            return PoincareResult(None, i, battery[i], tuple(margins))
        C *= 2.0
        margins = poincare_check(spec, psi, W, battery, C)
    i = int(np.argmin(margins))
    return PoincareResult(C, i, battery[i], tuple(margins))


def poincare_constant(
    spec: OperatorSpec,
    v: Field,
    psi: Field,
    W: Field,
    battery: Sequence[Field],
    C_max: float = 1e12,
    orth_rel: float = 1e-8,
) -> PoincareResult:
    """Doubling search for C in ``C^{-1} int W|u|^p <= Q(u) + C|int psi u|^p``.

    Refuses when ``int psi v`` vanishes relative to the norms of psi and v.
    """
    pair = _psi_pairing(psi, Field(psi.grid, v.at(psi.grid.nodes)))
    scale = math.sqrt(lp_norm_p(psi, 2.0)) * math.sqrt(lp_norm_p(Field(psi.grid, v.at(psi.grid.nodes)), 2.0))
    if abs(pair) <= orth_rel * max(scale, 1e-300):
        raise PreconditionError("psi is orthogonal to the ground state; no such C is guaranteed")
    return poincare_search(spec, psi, W, battery, C_max)


def window_hat(grid: RadialGrid, window: tuple[float, float]) -> Field:
    """Nodal hat on ``window`` peaking at its midpoint."""
    a, b = window
    m = 0.5 * (a + b)
    return Field(grid, np.clip(1.0 - np.abs(grid.nodes - m) / (m - a), 0.0, None))


def orthogonal_psi(v: Field, window: tuple[float, float]) -> Field:
    """Sign-changing profile on ``window`` with ``int psi v = 0``."""
    g = v.grid
    hat = window_hat(g, window).values
    m = 0.5 * sum(window)
    plus = Field(g, np.where(g.nodes < m, hat, 0.0))
    minus = Field(g, np.where(g.nodes >= m, hat, 0.0))
    k = _psi_pairing(plus, v) / _psi_pairing(minus, v)
    return Field(g, plus.values - k * minus.values)


# -- positive solutions along the exhaustion --------------------------------

def _annular_bump(grid: RadialGrid, lo: float, hi: float) -> Field:
    r = grid.nodes
    t = np.clip((r - lo) / (hi - lo), 0.0, 1.0)
    vals = 4.0 * t * (1.0 - t)
    vals[grid.dirichlet_mask] = 0.0
    f = Field(grid, vals)
    m = lp_norm_p(f, 2.0) ** 0.5
    return f * (1.0 / m) if m > 0.0 else f


def positive_solution_via_exhaustion(
    problem: Problem,
    exhaustion: Exhaustion,
    x0: float,
    opts: SolveOptions = SolveOptions(),
    return_levels: bool = False,
) -> Field | list[Field]:
    """``v_N = u_N / u_N(x0)`` with ``Q'(u_N) = f_N`` on level N, f_N >= 0 supported in the new shell.

    The bump sits in the outer part of ``Omega_N minus Omega_{N-1}`` (the side
    that grew by more in log scale, when both grew).
    """
    out = []
    prev_phi = None
    for i in range(1, len(exhaustion)):
        (a0, b0), (a1, b1) = exhaustion.levels[i - 1], exhaustion.levels[i]
        if not (a1 < x0 < b1):
            raise PreconditionError(f"x0 = {x0} outside level {i}")
        g = exhaustion.grid(i)
        spec = problem.on(g)
        start = None if prev_phi is None else prev_phi.at(g.nodes)
        eig = principal_eigen(spec, opts, start)
        prev_phi = eig.eigenfunction
        if eig.lambda_ <= 0.0:
            raise SolverError(f"lambda_1 = {eig.lambda_:.4g} <= 0 on this level", level=i)
        right_gain = math.log(b1 / b0) if b0 > 0.0 else b1 - b0
        left_gain = math.log(a0 / a1) if a1 > 0.0 else a0 - a1
        if b1 > b0 and (right_gain >= left_gain or not a1 < a0):
            lo, hi = b0, b1
        elif a1 < a0:
            lo, hi = a1, a0
        else:
            raise PreconditionError(f"level {i} does not grow")
        f = _annular_bump(g, lo, hi)
        try:
            u = solve_dirichlet(spec, f, opts, lambda1=eig.lambda_)
        except SolverError as exc:
            raise SolverError(f"solve failed: {exc}", level=i) from exc
        ux0 = float(u.at(x0))
        if not ux0 > 0.0:
            raise SolverError("solution vanishes at x0", level=i)
        out.append(u * (1.0 / ux0))
    if not out:
        raise PreconditionError("need at least two levels")
    return out if return_levels else out[-1]
